"""Speaker embeddings from MFCC windows with a reconstruction bottleneck network.

The pipeline: WAV decoding and resampling (:mod:`audio`), MFCC instances
(:mod:`features`), corpus handling (:mod:`dataset`), a small dense-network
engine (:mod:`nn`), the three model families (:mod:`models`), a GMM baseline
(:mod:`gmm`), the enrollment database (:mod:`identify`) and evaluation
protocols (:mod:`evaluation`).
"""

from .audio import AudioBuffer, load_canonical, load_wav, resample, write_wav
from .errors import Speech2PhoneError
from .features import DEFAULT_CONFIG, Instance, MfccConfig, mfcc
from .identify import EmbeddingDb, enroll, identify_knn, load_db, save_db
from .kernels import BACKEND
from .models import (ModelBundle, SpeakerEmbedding, build_closed_set, build_pair_comparator, build_speech2phone,
                     embed, embed_batch, load_model, save_model)

__version__ = "0.1.0"

__all__ = ["AudioBuffer", "BACKEND", "DEFAULT_CONFIG", "EmbeddingDb", "Instance", "MfccConfig", "ModelBundle",
           "SpeakerEmbedding", "Speech2PhoneError", "build_closed_set", "build_pair_comparator",
           "build_speech2phone", "embed", "embed_batch", "enroll", "identify_knn", "load_canonical", "load_db",
           "load_model", "load_wav", "mfcc", "resample", "save_db", "save_model", "write_wav"]
