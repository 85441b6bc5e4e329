import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from speech2phone import gmm
from speech2phone.errors import ChecksumMismatch, DegenerateData, DimensionMismatch, NoModels, TooFewPoints


def two_clusters(seed=0):
    rng = np.random.default_rng(seed)
    return np.concatenate([rng.normal(-10, 0.1, 100), rng.normal(10, 0.1, 100)])


class TestFit:
    def test_k1_closed_form_scalar(self):
        m = gmm.gmm_fit([0.0, 2.0], k=1)
        assert m.weights.tolist() == [1.0]
        assert m.means[0, 0] == pytest.approx(1.0, abs=1e-12)
        assert m.variances[0, 0] == pytest.approx(1.0, abs=1e-12)

    def test_k1_closed_form_matrix(self):
        X = np.random.default_rng(3).standard_normal((50, 4)) * [1, 2, 3, 4]
        m = gmm.gmm_fit(X, k=1)
        np.testing.assert_allclose(m.means[0], X.mean(axis=0), atol=1e-9)
        np.testing.assert_allclose(m.variances[0], X.var(axis=0), atol=1e-9)

    def test_two_cluster_recovery(self):
        m = gmm.gmm_fit(two_clusters(), k=2, seed=0)
        order = np.argsort(m.means[:, 0])
        np.testing.assert_allclose(m.means[order, 0], [-10, 10], atol=0.1)
        np.testing.assert_allclose(m.weights[order], [0.5, 0.5], atol=0.05)

    @pytest.mark.parametrize("seed", range(5))
    def test_em_monotone(self, seed):
        X = np.random.default_rng(seed).standard_normal((120, 3))
        m = gmm.gmm_fit(X, k=4, seed=seed, tol=0.0, max_iter=60)
        assert np.all(np.diff(m.history) >= -1e-9)

    def test_weights_and_floor(self):
        X = np.random.default_rng(0).standard_normal((40, 2))
        m = gmm.gmm_fit(X, k=3, seed=1)
        assert m.weights.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(m.variances >= gmm.VAR_FLOOR)

    def test_duplicate_points_are_floored(self):
        X = np.array([[0.0], [0.0], [0.0], [5.0], [5.0], [5.0]])
        m = gmm.gmm_fit(X, k=2, seed=0)
        assert np.all(m.variances >= gmm.VAR_FLOOR)
        assert np.all(np.isfinite(m.history))

    def test_errors(self):
        with pytest.raises(TooFewPoints):
            gmm.gmm_fit(np.zeros((3, 2)), k=4)
        with pytest.raises(DegenerateData):
            gmm.gmm_fit(np.ones((10, 2)), k=2)

    def test_deterministic(self):
        X = np.random.default_rng(0).standard_normal((60, 3))
        a, b = gmm.gmm_fit(X, 3, seed=4), gmm.gmm_fit(X, 3, seed=4)
        assert np.array_equal(a.means, b.means) and a.history == b.history


class TestLikelihood:
    def test_standard_normal_peak(self):
        m = gmm.GmmModel(np.array([1.0]), np.zeros((1, 1)), np.ones((1, 1)))
        assert gmm.gmm_log_likelihood(m, [0.0]) == pytest.approx(-0.5 * np.log(2 * np.pi))
        assert gmm.gmm_log_likelihood(m, [0.0]) > gmm.gmm_log_likelihood(m, [0.3])

    def test_duplicate_component(self):
        m = gmm.gmm_fit(np.random.default_rng(0).standard_normal((30, 2)), k=2, seed=0)
        split = gmm.GmmModel(np.concatenate([m.weights[:1] / 2, m.weights[:1] / 2, m.weights[1:]]),
                             np.vstack([m.means[:1], m.means]), np.vstack([m.variances[:1], m.variances]))
        x = np.array([0.3, -0.2])
        assert gmm.gmm_log_likelihood(split, x) == pytest.approx(gmm.gmm_log_likelihood(m, x), abs=1e-12)

    @settings(max_examples=25, deadline=None)
    @given(st.permutations(range(4)))
    def test_component_permutation(self, perm):
        m = gmm.gmm_fit(np.random.default_rng(1).standard_normal((40, 2)), k=4, seed=0)
        p = list(perm)
        q = gmm.GmmModel(m.weights[p], m.means[p], m.variances[p])
        x = np.array([0.5, 0.1])
        assert gmm.gmm_log_likelihood(q, x) == pytest.approx(gmm.gmm_log_likelihood(m, x), abs=1e-12)

    def test_far_point_is_finite(self):
        m = gmm.gmm_fit(np.random.default_rng(1).standard_normal((40, 2)), k=2, seed=0)
        assert np.isfinite(gmm.gmm_log_likelihood(m, [1e3, -1e3]))

    def test_dimension_mismatch(self):
        m = gmm.GmmModel(np.array([1.0]), np.zeros((1, 2)), np.ones((1, 2)))
        with pytest.raises(DimensionMismatch):
            gmm.gmm_log_likelihood(m, [0.0])


def _point_model(name, mean):
    return gmm.GmmModel(np.array([1.0]), np.array([[mean]]), np.ones((1, 1)), name)


class TestClassify:
    def test_single_model(self):
        assert gmm.gmm_classify([_point_model("only", 0.0)], [100.0]) == "only"

    def test_nearest_mean(self):
        models = [_point_model("A", 0.0), _point_model("B", 50.0)]
        assert gmm.gmm_classify(models, [0.0]) == "A"

    def test_tie_goes_to_smallest_id(self):
        assert gmm.gmm_classify([_point_model("b", 0.0), _point_model("a", 0.0)], [1.0]) == "a"

    def test_no_models(self):
        with pytest.raises(NoModels):
            gmm.gmm_classify([], [0.0])

    def test_constant_shift_invariance(self):
        # shifting every model's log-likelihood equally (scaling all weights) keeps the argmax
        models = [_point_model("A", 0.0), _point_model("B", 3.0)]
        shifted = [gmm.GmmModel(np.array([1.0]), m.means, m.variances * 1.0, m.speaker_id) for m in models]
        x = np.array([1.2])
        assert gmm.gmm_classify(models, x) == gmm.gmm_classify(shifted, x)
        ids, scores = gmm.gmm_scores(models, x[None, :])
        assert ids[int(np.argmax(scores[0] + 7.5))] == gmm.gmm_classify(models, x)

    def test_fit_speaker_gmms(self):
        rng = np.random.default_rng(0)
        X = np.vstack([rng.normal(-5, 1, (20, 3)), rng.normal(5, 1, (20, 3))])
        labels = ["neg"] * 20 + ["pos"] * 20
        ms = gmm.fit_speaker_gmms(X, labels, k=2, seed=0)
        assert [m.speaker_id for m in ms] == ["neg", "pos"]
        assert gmm.gmm_classify_batch(ms, X) == labels


class TestPersistence:
    def test_round_trip(self, tmp_path):
        X = np.random.default_rng(0).standard_normal((30, 3))
        ms = gmm.fit_speaker_gmms(X, ["a"] * 15 + ["b"] * 15, k=2)
        gmm.save_gmms(ms, tmp_path / "g.s2ph")
        back = gmm.load_gmms(tmp_path / "g.s2ph")
        assert gmm.is_gmm_file(tmp_path / "g.s2ph")
        assert [m.speaker_id for m in back] == ["a", "b"]
        assert gmm.gmms_to_bytes(back) == (tmp_path / "g.s2ph").read_bytes()

    def test_corruption(self):
        ms = [_point_model("a", 1.0)]
        blob = bytearray(gmm.gmms_to_bytes(ms))
        blob[22] ^= 1
        with pytest.raises(ChecksumMismatch):
            gmm.gmms_from_bytes(bytes(blob))
