import math

import numpy as np
import pytest

from speech2phone import evaluation, gmm, models, nn
from speech2phone.errors import (ConstantTarget, DegenerateEmbedderWarning, DimensionMismatch,
                                 InsufficientInstances, PoolTooSmall, UnknownLabel)


def identity_embedder(dim=3):
    """Speech2Phone-shaped bundle whose embedding is ELU of the raw input."""
    net = nn.DenseNetwork([nn.Layer(np.eye(dim), np.zeros(dim), "elu"),
                           nn.Layer(np.eye(dim), np.zeros(dim), "identity")], embedding_layer=0)
    return models.ModelBundle(net, models.SPEECH2PHONE, np.zeros(dim), np.ones(dim))


def clustered(n_speakers, per_speaker, spread=0.05, seed=0, dim=3):
    rng = np.random.default_rng(seed)
    centres = rng.uniform(0.5, 5.0, (n_speakers, dim))
    X, labels = [], []
    for s in range(n_speakers):
        for _ in range(per_speaker):
            X.append(centres[s] + spread * rng.standard_normal(dim))
            labels.append(f"s{s:02d}")
    return np.array(X), labels


class TestR2:
    def test_perfect_and_mean(self):
        t = np.array([[1.0, 2.0], [3.0, 5.0]])
        assert evaluation.r2_score(t, t) == 1.0
        assert evaluation.r2_score(np.full_like(t, t.mean()), t) == pytest.approx(0.0, abs=1e-15)

    def test_hand_value(self):
        # residual 0.5 against total 2 over [1, 2, 3]
        assert evaluation.r2_score([1.5, 2.0, 2.5], [1.0, 2.0, 3.0]) == pytest.approx(1 - 0.5 / 2.0)

    def test_errors(self):
        with pytest.raises(ConstantTarget):
            evaluation.r2_score([1.0, 2.0], [3.0, 3.0])
        with pytest.raises(DimensionMismatch):
            evaluation.r2_score([1.0, 2.0], [1.0, 2.0, 3.0])
        with pytest.raises(ValueError):
            evaluation.r2_score([1.0], [2.0])


class TestReports:
    def test_csv_format(self):
        reports = [evaluation.EvalReport("open_loo", 71.875, 32, 32, 0, 0.77123),
                   evaluation.EvalReport("closed", 100.0, 10, 4, 3)]
        assert evaluation.reports_to_csv(reports) == (
            "protocol,n_train,n_test,accuracy_pct,r2,seed\n"
            "open_loo,32,32,71.88,0.7712,0\n"
            "closed,10,4,100.00,,3\n")

    def test_validation(self):
        with pytest.raises(ValueError):
            evaluation.EvalReport("open", 50.0, 1, 1)
        with pytest.raises(ValueError):
            evaluation.EvalReport("closed", 101.0, 1, 1)


class TestOpenSet:
    def test_loo_hand_example(self):
        E = np.array([[0.0], [0.1], [5.0], [5.2], [0.2]])
        assert evaluation.loo_predictions(E, list("aabba")) == list("aabba")
        E2 = np.array([[0.0], [5.1], [5.0], [0.1]])
        # every nearest neighbour belongs to the other speaker
        assert evaluation.loo_predictions(E2, list("abab")) == list("baba")

    def test_loo_needs_two_per_speaker(self):
        with pytest.raises(InsufficientInstances):
            evaluation.loo_predictions(np.zeros((3, 2)) + np.arange(3)[:, None], ["a", "a", "b"])

    def test_degenerate_embedder_warns(self):
        with pytest.warns(DegenerateEmbedderWarning):
            evaluation.loo_predictions(np.ones((4, 2)), list("aabb"))

    def test_separable_clusters(self):
        X, labels = clustered(5, 4)
        report = evaluation.eval_open_set(identity_embedder(), X, labels)
        assert report.protocol == "open_loo" and report.accuracy == 100.0 and report.n_test == 20

    def test_r2_uses_reconstruction(self):
        X, labels = clustered(2, 3)
        report = evaluation.eval_open_set(identity_embedder(), X, labels, targets=X)
        assert report.r2 == pytest.approx(1.0)     # positive inputs pass through ELU unchanged

    def test_enroll_k(self):
        X, labels = clustered(3, 4)
        offsets = np.tile(np.arange(4), 3)
        report = evaluation.eval_open_set(identity_embedder(), X, labels, offsets, mode="enroll_k", k=2)
        assert report.protocol == "open_enroll_k" and report.n_test == 6 and report.accuracy == 100.0
        with pytest.raises(InsufficientInstances):
            evaluation.eval_open_set(identity_embedder(), X, labels, offsets, mode="enroll_k", k=4)

    def test_unknown_mode(self):
        X, labels = clustered(2, 2)
        with pytest.raises(ValueError):
            evaluation.eval_open_set(identity_embedder(), X, labels, mode="kfold")

    def test_per_speaker_majority(self):
        acc, per = evaluation._accuracy(list("aabbb"), list("aaabb"), per_speaker_majority=True)
        assert acc == 100.0
        assert per == {"a": pytest.approx(200 / 3), "b": 100.0}


class TestClosedSet:
    def test_network(self):
        net = nn.DenseNetwork([nn.Layer(np.eye(2), np.zeros(2), "softmax")])
        b = models.ModelBundle(net, models.CLOSED_SET, np.zeros(2), np.ones(2), labels=["x", "y"])
        report = evaluation.eval_closed_set(b, np.array([[1.0, 0.0], [0.0, 1.0], [2.0, 1.0]]), ["x", "y", "y"])
        assert report.accuracy == pytest.approx(200 / 3) and report.protocol == "closed"
        with pytest.raises(UnknownLabel):
            evaluation.eval_closed_set(b, np.zeros((1, 2)), ["z"])

    def test_gmm_list(self):
        X, labels = clustered(3, 6, dim=2)
        mixtures = gmm.fit_speaker_gmms(X, labels, k=1)
        report = evaluation.eval_closed_set(mixtures, X, labels)
        assert report.protocol == "gmm" and report.accuracy == 100.0
        with pytest.raises(UnknownLabel):
            evaluation.eval_closed_set(mixtures, X[:1], ["nobody"])


class TestPair:
    def test_uniform_comparator_picks_smallest_label(self):
        net = nn.DenseNetwork([nn.Layer(np.zeros((2, 4)), np.zeros(2), "softmax")])
        comp = models.ModelBundle(net, models.PAIR_COMPARATOR, np.zeros(4), np.ones(4), labels=models.PAIR_LABELS)
        report = evaluation.eval_pair(comp, np.arange(8.0).reshape(4, 2), ["b", "a", "b", "c"])
        # every probability ties, so each query picks the smallest other label, never its own
        assert report.accuracy == 0.0


class TestSweep:
    def test_enumerates_small_pools(self):
        X, labels = clustered(4, 3)
        result = evaluation.scalability_sweep(identity_embedder(), X, labels, [2, 3, 4], trials=10)
        counts = {s: sum(1 for r in result.trials if r[0] == s) for s in (2, 3, 4)}
        assert counts == {2: math.comb(4, 2), 3: math.comb(4, 3), 4: 1}
        assert [row[0] for row in result.summary] == [2, 3, 4]
        assert result.summary[-1][2] == 0.0

    def test_random_subsets_when_pool_is_large(self):
        X, labels = clustered(10, 2)
        result = evaluation.scalability_sweep(identity_embedder(), X, labels, [3], trials=5, seed=1)
        assert len(result.trials) == 5 and all(r[2] == 100.0 for r in result.trials)

    def test_std_uses_sample_estimator(self):
        X, labels = clustered(4, 2, spread=2.0, seed=3)
        result = evaluation.scalability_sweep(identity_embedder(), X, labels, [2], trials=10)
        accs = [r[2] for r in result.trials]
        assert result.summary[0][1] == pytest.approx(np.mean(accs))
        assert result.summary[0][2] == pytest.approx(np.std(accs, ddof=1))

    def test_csv(self):
        X, labels = clustered(3, 2)
        text = evaluation.scalability_sweep(identity_embedder(), X, labels, [3]).to_csv()
        assert text.splitlines() == ["n_speakers,trial,accuracy_pct", "3,0,100.00", "3,mean,100.00", "3,std,0.00"]

    def test_errors(self):
        X, labels = clustered(3, 2)
        with pytest.raises(PoolTooSmall):
            evaluation.scalability_sweep(identity_embedder(), X, labels, [2, 4])
        with pytest.raises(ValueError):
            evaluation.scalability_sweep(identity_embedder(), X, labels, [1])

    def test_seeded(self):
        X, labels = clustered(8, 2, spread=1.0)
        a = evaluation.scalability_sweep(identity_embedder(), X, labels, [3, 5], trials=4, seed=2)
        b = evaluation.scalability_sweep(identity_embedder(), X, labels, [3, 5], trials=4, seed=2)
        assert a.to_csv() == b.to_csv()
