import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speech2phone import identify, models, nn
from speech2phone.errors import (ChecksumMismatch, CorruptedFile, DimensionMismatch, EmbedderMismatchWarning,
                                 EmptyDatabase, EmptyEnrollment, MalformedFile, VersionMismatch, WrongKind)


def unit(i, dim=80, scale=1.0):
    v = np.zeros(dim)
    v[i] = scale
    return v


def brute_force(db, q):
    labels = db.labels
    dists = [float(np.linalg.norm(np.asarray(q) - row)) for row in db.matrix()]
    best = min(range(len(dists)), key=lambda i: (dists[i], labels[i], i))
    return labels[best], dists[best]


class TestEnroll:
    def test_all_mode_keeps_every_vector(self):
        db = identify.EmbeddingDb()
        identify.enroll(db, "A", [unit(0), unit(1)])
        identify.enroll(db, "B", np.stack([unit(2)]))
        assert len(db) == 3 and db.speakers == ["A", "B"]
        assert [len(v) for v in db.entries.values()] == [2, 1]

    def test_centroid_mode(self):
        db = identify.enroll(identify.EmbeddingDb(), "A", [unit(0), unit(1)], mode="centroid")
        np.testing.assert_array_equal(db.matrix(), [0.5 * (unit(0) + unit(1))])

    def test_speaker_embedding_objects(self):
        db = identify.enroll(identify.EmbeddingDb(), "A", [models.SpeakerEmbedding(unit(3))])
        assert identify.identify_knn(db, unit(3))[0] == "A"

    def test_errors(self):
        db = identify.EmbeddingDb()
        with pytest.raises(EmptyEnrollment):
            identify.enroll(db, "A", [])
        with pytest.raises(DimensionMismatch):
            identify.enroll(db, "A", [np.zeros(79)])
        with pytest.raises(ValueError):
            identify.enroll(db, "A", [np.full(80, np.nan)])
        with pytest.raises(ValueError):
            identify.enroll(db, "A", [unit(0)], mode="median")

    def test_vectors_stored_as_float32(self):
        v = np.full(80, 0.1)
        db = identify.enroll(identify.EmbeddingDb(), "A", [v])
        assert np.array_equal(db.matrix()[0], v.astype(np.float32).astype(np.float64))


class TestKnn:
    def test_geometry_example(self):
        db = identify.EmbeddingDb()
        identify.enroll(db, "A", [np.zeros(80)])
        identify.enroll(db, "B", [unit(0)])
        speaker, dist = identify.identify_knn(db, unit(0, scale=0.1))
        assert speaker == "A" and dist == pytest.approx(0.1)

    def test_tie_goes_to_smallest_label(self):
        db = identify.EmbeddingDb()
        identify.enroll(db, "zed", [unit(0)])
        identify.enroll(db, "amy", [unit(1)])
        assert identify.identify_knn(db, np.zeros(80))[0] == "amy"

    def test_empty(self):
        with pytest.raises(EmptyDatabase):
            identify.identify_knn(identify.EmbeddingDb(), np.zeros(80))

    def test_query_dimension(self):
        db = identify.enroll(identify.EmbeddingDb(), "A", [unit(0)])
        with pytest.raises(DimensionMismatch):
            identify.identify_knn(db, np.zeros(81))

    def test_winner_is_closest(self):
        rng = np.random.default_rng(0)
        db = identify.EmbeddingDb(8)
        for s in "abcde":
            identify.enroll(db, s, rng.standard_normal((4, 8)))
        for _ in range(50):
            q = rng.standard_normal(8)
            speaker, dist = identify.identify_knn(db, q)
            assert dist <= np.min(np.linalg.norm(db.matrix() - q, axis=1)) + 1e-15
            want_speaker, want_dist = brute_force(db, q)
            assert speaker == want_speaker and dist == pytest.approx(want_dist, rel=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10_000))
    def test_enrollment_order_invariance(self, seed):
        rng = np.random.default_rng(seed)
        vecs = {s: rng.integers(-2, 3, (2, 4)).astype(float) for s in "pqrs"}
        q = rng.integers(-2, 3, 4).astype(float)
        results = set()
        for order in ("pqrs", "srqp", "qspr"):
            db = identify.EmbeddingDb(4)
            for s in order:
                identify.enroll(db, s, vecs[s])
            results.add(identify.identify_knn(db, q))
        assert len(results) == 1

    def test_new_far_speaker_does_not_change_result(self):
        db = identify.EmbeddingDb(4)
        identify.enroll(db, "A", [np.zeros(4)])
        identify.enroll(db, "B", [np.ones(4)])
        q = np.full(4, 0.1)
        before = identify.identify_knn(db, q)
        identify.enroll(db, "C", [np.full(4, 10.0)])
        assert identify.identify_knn(db, q) == before

    def test_l2_flag(self):
        db = identify.EmbeddingDb(2, l2_normalize=True)
        identify.enroll(db, "x", [np.array([10.0, 0.0])])
        identify.enroll(db, "y", [np.array([0.0, 0.1])])
        assert identify.identify_knn(db, np.array([0.0, 5.0]))[0] == "y"


class TestPairIdentify:
    def _uniform_comparator(self, dim=4):
        net = nn.DenseNetwork([nn.Layer(np.zeros((3, 2 * dim)), np.zeros(3), "elu"),
                               nn.Layer(np.zeros((2, 3)), np.zeros(2), "softmax")])
        return models.ModelBundle(net, models.PAIR_COMPARATOR, np.zeros(2 * dim), np.ones(2 * dim),
                                  labels=models.PAIR_LABELS)

    def test_single_speaker(self):
        db = identify.enroll(identify.EmbeddingDb(4), "solo", [np.ones(4)])
        assert identify.identify_pair(db, self._uniform_comparator(), np.zeros(4))[0] == "solo"

    def test_uniform_comparator_uses_tie_break(self):
        db = identify.EmbeddingDb(4)
        identify.enroll(db, "m", [np.ones(4)])
        identify.enroll(db, "c", [np.zeros(4)])
        speaker, p = identify.identify_pair(db, self._uniform_comparator(), np.ones(4))
        assert speaker == "c" and p == pytest.approx(0.5)

    def test_wrong_kind(self):
        db = identify.enroll(identify.EmbeddingDb(4), "a", [np.ones(4)])
        s2p = models.build_speech2phone(0, hidden=4, input_dim=6, output_dim=2)
        with pytest.raises(WrongKind):
            identify.identify_pair(db, s2p, np.ones(4))


class TestMajority:
    def test_votes(self):
        assert identify.majority_verdict([("a", 1.0), ("b", 0.5), ("a", 2.0)]) == ("a", 1.0)

    def test_tie_goes_to_closest_window(self):
        assert identify.majority_verdict([("a", 1.0), ("b", 0.5)])[0] == "b"

    def test_empty(self):
        with pytest.raises(ValueError):
            identify.majority_verdict([])


class TestPersistence:
    def _db(self):
        db = identify.EmbeddingDb(6, created_with=0xDEADBEEF)
        rng = np.random.default_rng(0)
        identify.enroll(db, "ana", rng.standard_normal((3, 6)))
        identify.enroll(db, "bo", rng.standard_normal((1, 6)))
        identify.enroll(db, "ana", rng.standard_normal((1, 6)))
        return db

    def test_round_trip(self, tmp_path):
        db = self._db()
        identify.save_db(db, tmp_path / "a.s2db")
        back = identify.load_db(tmp_path / "a.s2db", 0xDEADBEEF)
        assert back.created_with == 0xDEADBEEF
        assert {k: len(v) for k, v in back.entries.items()} == {"ana": 4, "bo": 1}
        for s in db.entries:
            np.testing.assert_array_equal(np.stack(back.entries[s]), np.stack(db.entries[s]))
        identify.save_db(back, tmp_path / "b.s2db")
        assert (tmp_path / "a.s2db").read_bytes() == (tmp_path / "b.s2db").read_bytes()

    def test_empty_round_trip(self):
        back = identify.db_from_bytes(identify.db_to_bytes(identify.EmbeddingDb()))
        assert len(back) == 0 and back.dim == 80

    def test_embedder_mismatch_warns_by_default(self):
        blob = identify.db_to_bytes(self._db())
        with pytest.warns(EmbedderMismatchWarning):
            identify.db_from_bytes(blob, embedder_checksum=1)

    def test_embedder_mismatch_strict(self):
        with pytest.raises(ChecksumMismatch):
            identify.db_from_bytes(identify.db_to_bytes(self._db()), embedder_checksum=1, strict=True)

    def test_corruption(self):
        blob = identify.db_to_bytes(self._db())
        for i in range(len(blob)):
            bad = bytearray(blob)
            bad[i] ^= 0x01
            with pytest.raises(CorruptedFile):
                identify.db_from_bytes(bytes(bad))

    def test_truncated(self):
        blob = identify.db_to_bytes(self._db())
        with pytest.raises(MalformedFile):
            identify.db_from_bytes(blob[:-9])

    def test_version(self):
        body = bytearray(identify.db_to_bytes(self._db())[:-4])
        body[4:8] = struct.pack("<I", 2)
        with pytest.raises(VersionMismatch):
            identify.db_from_bytes(bytes(body) + struct.pack("<I", zlib.crc32(body)))
