"""``speech2phone`` command line.

Every subcommand is a thin composition of library calls. Exit status is 0 on
success, 1 on a domain error (reported on stderr) and 2 on a usage error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import dataset, evaluation, gmm, identify, models, nn
from .audio import load_canonical
from .errors import Speech2PhoneError, TooShort
from .features import DEFAULT_CONFIG, MfccConfig, extract_instances
from .synth import make_speakers, write_corpus

log = logging.getLogger("speech2phone")

MODEL_CHOICES = {"speech2phone": models.SPEECH2PHONE, "closed-set": models.CLOSED_SET,
                 "pair": models.PAIR_COMPARATOR, "gmm": "gmm"}


class UsageError(Exception):
    """Bad flag combination detected after parsing (exit 2)."""


# -- helpers -------------------------------------------------------------------

def _threads(args) -> int:
    if args.threads is not None:
        return args.threads
    env = os.environ.get("S2P_THREADS", "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        raise UsageError(f"S2P_THREADS must be an integer, got {env!r}") from None


def _mfcc_config(args) -> MfccConfig:
    return MfccConfig(n_fft=args.n_fft, hop=args.hop, n_mels=args.n_mels, n_mfcc=args.n_mfcc)


def _load_instances(args, threads: int):
    if getattr(args, "instances", None):
        return dataset.load_instances(args.instances)
    if getattr(args, "manifest", None):
        return dataset.materialize(dataset.load_manifest(args.manifest), DEFAULT_CONFIG, threads)
    raise UsageError("give either --instances or --manifest")


def _load_any_model(path):
    if gmm.is_gmm_file(path):
        return gmm.load_gmms(path)
    return models.load_model(path)


def _emit(text: str, out) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
        log.info("wrote %s", out)
    else:
        sys.stdout.write(text)


def _parse_sizes(text: str) -> list[int]:
    try:
        if ".." in text:
            lo, hi = text.split("..")
            return list(range(int(lo), int(hi) + 1))
        return [int(t) for t in text.split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"sizes must look like '2..12' or '2,4,8', got {text!r}") from None


# -- subcommands ---------------------------------------------------------------

def cmd_features(args) -> int:
    cfg = _mfcc_config(args)
    entries = dataset.load_manifest(args.manifest)
    instances = dataset.materialize(entries, cfg, _threads(args))
    dataset.save_instances(args.out, instances)
    print(f"{len(instances)} instances from {len({i.speaker_id for i in instances})} speakers -> {args.out}")
    return 0


def cmd_split(args) -> int:
    instances = dataset.load_instances(args.instances)
    parts = dataset.split(instances, dataset.SplitSpec(args.groups, args.holdout, args.seed))
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, part in parts.items():
        if part:
            dataset.save_instances(out / f"{name}.npz", part)
        print(f"{name}\t{len(part)}\t{len({i.speaker_id for i in part})}")
    return 0


def _train_config(args, kind) -> nn.TrainConfig:
    base = models.REGIMENS[kind]
    return nn.TrainConfig(epochs=args.epochs or base.epochs, lr=args.lr or base.lr,
                          batch_size=args.batch_size or base.batch_size, seed=args.seed)


def _progress(every):
    def callback(epoch, loss):
        if every and (epoch + 1) % every == 0:
            log.info("epoch %d loss %.6f", epoch + 1, loss)
    return callback


def cmd_train(args) -> int:
    kind = MODEL_CHOICES[args.model]
    instances = _load_instances(args, _threads(args))
    X, targets, speakers, _ = dataset.stack(instances)

    if kind == "gmm":
        mixtures = gmm.fit_speaker_gmms(X, speakers, args.components, args.seed,
                                        max_iter=args.max_iter, tol=args.tol)
        gmm.save_gmms(mixtures, args.out)
        print(f"gmm: {len(mixtures)} speakers, k={args.components} -> {args.out}")
        return 0

    cfg = _train_config(args, kind)
    callback = _progress(args.log_every)
    if kind == models.SPEECH2PHONE:
        if targets is None:
            raise UsageError("speech2phone training needs instances with anchor targets")
        bundle = models.build_speech2phone(args.seed, hidden=args.hidden or models.EMBEDDING_DIM,
                                           input_dim=X.shape[1], output_dim=targets.shape[1])
        bundle, history = models.fit(bundle, X, targets, cfg, callback)
    elif kind == models.CLOSED_SET:
        labels = sorted(set(speakers))
        bundle = models.build_closed_set(len(labels), args.seed, hidden=args.hidden or models.CLOSED_SET_HIDDEN,
                                         input_dim=X.shape[1], labels=labels)
        index = {s: i for i, s in enumerate(labels)}
        bundle, history = models.fit(bundle, X, np.array([index[s] for s in speakers]), cfg, callback)
    else:
        if not args.embedder:
            raise UsageError("pair training needs --embedder (a speech2phone model)")
        embedder = models.load_model(args.embedder)
        E = models.embed_batch(embedder, X)
        pairs = dataset.build_pair_dataset(list(zip(speakers, E)), args.negative_ratio, args.seed)
        bundle = models.build_pair_comparator(args.seed, hidden=args.hidden or models.PAIR_HIDDEN,
                                              embedding_dim=E.shape[1])
        bundle, history = models.fit_pair_comparator(bundle, pairs, cfg, callback)

    models.save_model(bundle, args.out)
    print(f"{args.model}: {cfg.epochs} epochs, loss {history[0]:.6f} -> {history[-1]:.6f} -> {args.out}")
    return 0


def cmd_embed(args) -> int:
    embedder = models.load_model(args.model)
    if args.audio:
        buf = load_canonical(args.audio)
        instances = extract_instances(buf, DEFAULT_CONFIG, source=args.audio)
        if not instances:
            raise TooShort(f"{args.audio}: {buf.duration:.2f} s of audio, at least 5 s needed")
    else:
        instances = _load_instances(args, _threads(args))
    X, _, speakers, offsets = dataset.stack(instances)
    E = models.embed_batch(embedder, X)
    dataset.write_npz(args.out, {"embeddings": E,
                                 "speakers": np.array(["" if s is None else str(s) for s in speakers]),
                                 "offsets": offsets})
    print(f"{E.shape[0]} embeddings of dimension {E.shape[1]} -> {args.out}")
    return 0


def cmd_enroll(args) -> int:
    embedder = models.load_model(args.model)
    checksum = models.model_checksum(embedder)
    db_path = Path(args.db)
    if db_path.exists():
        db = identify.load_db(db_path, checksum, strict=True)
    else:
        db = identify.EmbeddingDb(embedder.network.layers[embedder.network.embedding_layer].out_dim,
                                  checksum, args.l2)
    if args.audio:
        if not args.speaker:
            raise UsageError("--audio enrollment needs --speaker")
        rows = []
        for path in args.audio:
            instances = extract_instances(load_canonical(path), DEFAULT_CONFIG, args.speaker, source=path)
            if not instances:
                raise TooShort(f"{path}: shorter than 5 s, nothing to enroll")
            rows.append(models.embed_batch(embedder, np.stack([i.input for i in instances])))
        identify.enroll(db, args.speaker, np.concatenate(rows), args.mode)
    else:
        X, _, speakers, _ = dataset.stack(_load_instances(args, _threads(args)))
        E = models.embed_batch(embedder, X)
        speakers = np.array(speakers)
        for s in dict.fromkeys(speakers.tolist()):
            identify.enroll(db, s, E[speakers == s], args.mode)
    identify.save_db(db, db_path)
    print(f"{len(db.speakers)} speakers, {len(db)} embeddings -> {db_path}")
    return 0


def cmd_identify(args) -> int:
    embedder = models.load_model(args.model)
    db = identify.load_db(args.db, models.model_checksum(embedder), strict=not args.allow_mismatch)
    buf = load_canonical(args.audio)
    instances = extract_instances(buf, DEFAULT_CONFIG, source=args.audio)
    if not instances:
        raise TooShort(f"{args.audio}: {buf.duration:.2f} s of audio; identification needs at least 5 s "
                       "(record more speech or concatenate captures)")
    E = models.embed_batch(embedder, np.stack([i.input for i in instances]))
    comparator = models.load_model(args.comparator) if args.comparator else None
    results = []
    for inst, e in zip(instances, E):
        if comparator is None:
            speaker, score = identify.identify_knn(db, e)
        else:
            speaker, score = identify.identify_pair(db, comparator, e)
        results.append((speaker, score))
        print(f"window\t{inst.source_offset_s}\t{speaker}\t{score:.6f}")
    if comparator is None:
        speaker, score = identify.majority_verdict(results)
    else:
        # higher probability is better; reuse the distance tie rule on 1 - p
        speaker, score = identify.majority_verdict([(s, 1.0 - p) for s, p in results])
        score = 1.0 - score
    print(f"verdict\t{speaker}\t{score:.6f}")
    return 0


def cmd_eval_closed(args) -> int:
    model = _load_any_model(args.model)
    X, _, speakers, _ = dataset.stack(_load_instances(args, _threads(args)))
    report = evaluation.eval_closed_set(model, X, speakers, args.n_train, args.seed, args.per_speaker_majority)
    _emit(evaluation.reports_to_csv([report]), args.report)
    return 0


def cmd_eval_open(args) -> int:
    embedder = models.load_model(args.model)
    X, targets, speakers, offsets = dataset.stack(_load_instances(args, _threads(args)))
    reports = [evaluation.eval_open_set(embedder, X, speakers, offsets, targets, args.mode, args.k, args.seed,
                                        args.n_train, args.per_speaker_majority)]
    if args.comparator:
        comparator = models.load_model(args.comparator)
        reports.append(evaluation.eval_pair(comparator, models.embed_batch(embedder, X), speakers,
                                            args.n_train, args.seed))
    _emit(evaluation.reports_to_csv(reports), args.report)
    return 0


def cmd_sweep(args) -> int:
    embedder = models.load_model(args.model)
    X, _, speakers, _ = dataset.stack(_load_instances(args, _threads(args)))
    result = evaluation.scalability_sweep(embedder, X, speakers, args.sizes, args.trials, args.seed)
    _emit(result.to_csv(), args.out)
    return 0


def cmd_synth(args) -> int:
    speakers = make_speakers(args.speakers, args.seed)
    manifest = write_corpus(args.out_dir, speakers, args.seconds, args.seed)
    print(f"{len(speakers)} synthetic speakers -> {manifest}")
    return 0


# -- parser ----------------------------------------------------------------------

def _positive(text: str) -> int:
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {value}")
    return value


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS,
                        help="seed for every random choice (default: 0)")
    common.add_argument("--threads", type=_positive, default=argparse.SUPPRESS,
                        help="worker threads for feature extraction (default: $S2P_THREADS or 1)")
    common.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS,
                        help="log progress to stderr; repeat for debug output")

    parser = argparse.ArgumentParser(prog="speech2phone", parents=[common],
                                     description="Speaker embeddings from MFCC windows: train, enroll, identify, evaluate.",
                                     formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text, description=help_text,
                           formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.set_defaults(func=func)
        return p

    def data_source(p):
        src = p.add_mutually_exclusive_group()
        src.add_argument("--instances", help="instance dump (.npz) written by 'features' or 'split'")
        src.add_argument("--manifest", help="corpus manifest; features are extracted on the fly")

    p = add("features", cmd_features, "extract 5-s MFCC instances (and anchor targets) from a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True, help="output .npz")
    p.add_argument("--n-fft", type=_positive, default=DEFAULT_CONFIG.n_fft)
    p.add_argument("--hop", type=_positive, default=DEFAULT_CONFIG.hop)
    p.add_argument("--n-mels", type=_positive, default=DEFAULT_CONFIG.n_mels)
    p.add_argument("--n-mfcc", type=_positive, default=DEFAULT_CONFIG.n_mfcc)

    p = add("split", cmd_split, "partition instances into speaker groups with per-speaker holdout")
    p.add_argument("--instances", required=True)
    p.add_argument("--out-dir", required=True)
    p.add_argument("--groups", type=_positive, default=dataset.SplitSpec.groups)
    p.add_argument("--holdout", type=int, default=dataset.SplitSpec.holdout_per_speaker,
                   help="windows per speaker moved to the _2 partition")

    p = add("train", cmd_train, "train a model; epochs/lr/batch default to the model's regimen")
    p.add_argument("--model", required=True, choices=sorted(MODEL_CHOICES))
    p.add_argument("--out", required=True, help="output model file")
    data_source(p)
    p.add_argument("--epochs", type=_positive, default=None,
                   help="speech2phone 1000, closed-set 3000, pair 1000")
    p.add_argument("--lr", type=float, default=None, help="speech2phone 0.0007, closed-set 0.00005, pair 0.0001")
    p.add_argument("--batch-size", type=_positive, default=None, help="speech2phone 128, closed-set 64, pair 16")
    p.add_argument("--hidden", type=_positive, default=None, help="hidden width: 80, 256, 64 respectively")
    p.add_argument("--embedder", help="speech2phone model used to embed pair training data")
    p.add_argument("--negative-ratio", type=float, default=1.0, help="cross-speaker pairs per same-speaker pair")
    p.add_argument("--components", type=_positive, default=gmm.DEFAULT_COMPONENTS, help="GMM components")
    p.add_argument("--max-iter", type=_positive, default=200, help="GMM EM iterations")
    p.add_argument("--tol", type=float, default=1e-4, help="GMM convergence tolerance")
    p.add_argument("--log-every", type=int, default=100, help="log the loss every N epochs with -v")

    p = add("embed", cmd_embed, "write embeddings of instances or of a WAV file")
    p.add_argument("--model", required=True)
    p.add_argument("--out", required=True, help="output .npz")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--instances")
    src.add_argument("--manifest")
    src.add_argument("--audio")

    p = add("enroll", cmd_enroll, "add speakers to an embedding database (created if missing)")
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--instances", help="enroll every speaker in an instance dump")
    src.add_argument("--manifest")
    src.add_argument("--audio", nargs="+", help="WAV files of a single speaker (needs --speaker)")
    p.add_argument("--speaker")
    p.add_argument("--mode", choices=["all", "centroid"], default="all")
    p.add_argument("--l2", action="store_true", help="L2-normalise embeddings (new databases only)")

    p = add("identify", cmd_identify, "identify the speaker of a WAV file (at least 5 s)")
    p.add_argument("--model", required=True)
    p.add_argument("--db", required=True)
    p.add_argument("--audio", required=True)
    p.add_argument("--comparator", help="pair comparator model; default is 1-nearest-neighbour")
    p.add_argument("--allow-mismatch", action="store_true",
                   help="warn instead of failing when the database was built with another embedder")

    def report_flags(p):
        p.add_argument("--report", help="CSV report path (default: stdout)")
        p.add_argument("--n-train", type=int, default=0, help="training-set size recorded in the report")
        p.add_argument("--per-speaker-majority", action="store_true",
                       help="score one majority vote per speaker instead of every instance")

    p = add("eval-closed", cmd_eval_closed, "closed-set accuracy of a classifier or GMM file")
    p.add_argument("--model", required=True)
    data_source(p)
    report_flags(p)

    p = add("eval-open", cmd_eval_open, "open-set 1-NN accuracy and reconstruction R2")
    p.add_argument("--model", required=True)
    data_source(p)
    p.add_argument("--mode", choices=["leave_one_out", "enroll_k"], default="leave_one_out")
    p.add_argument("--k", type=_positive, default=1, help="windows enrolled per speaker in enroll_k mode")
    p.add_argument("--comparator", help="also report pair-comparator accuracy")
    report_flags(p)

    p = add("sweep", cmd_sweep, "leave-one-out accuracy versus number of speakers")
    p.add_argument("--model", required=True)
    data_source(p)
    p.add_argument("--sizes", type=_parse_sizes, default="2..12", help="'lo..hi' or comma list")
    p.add_argument("--trials", type=_positive, default=10)
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = add("synth", cmd_synth, "write a synthetic corpus (WAVs plus manifest) for trying the pipeline")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--speakers", type=_positive, default=8)
    p.add_argument("--seconds", type=float, default=30.0, help="reading length per speaker")
    return parser


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    for name, default in (("seed", 0), ("threads", None), ("verbose", 0)):
        if not hasattr(args, name):
            setattr(args, name, default)
    if args.command is None:
        parser.print_usage(sys.stderr)
        print("speech2phone: error: a command is required", file=sys.stderr)
        return 2

    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"speech2phone {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (Speech2PhoneError, OSError, ValueError) as exc:
        print(f"speech2phone {args.command}: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
