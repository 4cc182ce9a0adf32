import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from storystream import metrics
from storystream.metrics import (
    LengthMismatch,
    NoPositivePairs,
    TooFew,
    WindowScore,
    alignment,
    ami,
    ari,
    b_cubed,
    prequential_average,
    uniformity,
)

RNG = np.random.default_rng(123)


class TestBCubed:
    def test_perfect(self):
        assert b_cubed([1, 1, 2], [1, 1, 2]) == (1.0, 1.0, 1.0)

    def test_all_merged(self):
        # truth {a,a,b,b}, pred one cluster: P=0.5, R=1, F1=2/3
        p, r, f1 = b_cubed([0, 0, 0, 0], ["a", "a", "b", "b"])
        assert p == pytest.approx(0.5)
        assert r == pytest.approx(1.0)
        assert f1 == pytest.approx(2 / 3)

    def test_all_singletons(self):
        p, r, f1 = b_cubed([0, 1, 2, 3], ["a", "a", "b", "b"])
        assert p == pytest.approx(1.0)
        assert r == pytest.approx(0.5)
        assert f1 == pytest.approx(2 / 3)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            b_cubed([1], [1, 2])

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 13))
        pred = oracles.random_labeling(rng, n, 4)
        truth = oracles.random_labeling(rng, n, 3)
        got = b_cubed(pred, truth)
        want = oracles.b_cubed_brute(pred, truth)
        np.testing.assert_allclose(got, want, atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=15, deadline=None)
    def test_item_order_and_label_name_invariance(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 12))
        pred = oracles.random_labeling(rng, n, 3)
        truth = oracles.random_labeling(rng, n, 3)
        perm = rng.permutation(n)
        renamed = [f"cluster-{p}" for p in pred]
        base = b_cubed(pred, truth)
        assert b_cubed([pred[i] for i in perm], [truth[i] for i in perm]) == pytest.approx(base)
        assert b_cubed(renamed, truth) == pytest.approx(base)


class TestAri:
    def test_identical(self):
        assert ari([0, 0, 1, 1], [0, 0, 1, 1]) == pytest.approx(1.0)

    def test_renamed_labels(self):
        assert ari(["x", "x", "y", "y"], [5, 5, 9, 9]) == pytest.approx(1.0)

    def test_symmetry(self):
        pred = [0, 0, 1, 2, 2, 1]
        truth = [0, 1, 1, 0, 2, 2]
        assert ari(pred, truth) == pytest.approx(ari(truth, pred))

    def test_six_item_fixture_vs_brute_force(self):
        pred = [0, 0, 1, 1, 2, 2]
        truth = ["a", "a", "a", "b", "b", "b"]
        assert ari(pred, truth) == pytest.approx(oracles.ari_brute(pred, truth), abs=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=30, deadline=None)
    def test_matches_pair_counting(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 13))
        pred = oracles.random_labeling(rng, n, 4)
        truth = oracles.random_labeling(rng, n, 4)
        assert ari(pred, truth) == pytest.approx(oracles.ari_brute(pred, truth), abs=1e-12)

    def test_matches_sklearn(self):
        sklearn_metrics = pytest.importorskip("sklearn.metrics")
        for seed in range(10):
            rng = np.random.default_rng(seed)
            pred = oracles.random_labeling(rng, 20, 4)
            truth = oracles.random_labeling(rng, 20, 3)
            assert ari(pred, truth) == pytest.approx(
                sklearn_metrics.adjusted_rand_score(truth, pred), abs=1e-12
            )


class TestAmi:
    def test_identical(self):
        assert ami([0, 0, 1, 1], [1, 1, 0, 0]) == pytest.approx(1.0)

    def test_independent_labelings_near_zero(self):
        rng = np.random.default_rng(99)
        pred = oracles.random_labeling(rng, 200, 4)
        truth = oracles.random_labeling(rng, 200, 4)
        assert abs(ami(pred, truth)) < 0.1

    def test_six_item_fixture_vs_direct_formula(self):
        pred = [0, 0, 1, 1, 2, 2]
        truth = ["a", "a", "a", "b", "b", "b"]
        assert ami(pred, truth) == pytest.approx(oracles.ami_brute(pred, truth), abs=1e-10)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_matches_exact_reimplementation(self, seed):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(2, 13))
        pred = oracles.random_labeling(rng, n, 4)
        truth = oracles.random_labeling(rng, n, 4)
        assert ami(pred, truth) == pytest.approx(oracles.ami_brute(pred, truth), abs=1e-9)

    def test_matches_sklearn(self):
        sklearn_metrics = pytest.importorskip("sklearn.metrics")
        for seed in range(10):
            rng = np.random.default_rng(seed + 1000)
            pred = oracles.random_labeling(rng, 15, 3)
            truth = oracles.random_labeling(rng, 15, 4)
            assert ami(pred, truth) == pytest.approx(
                sklearn_metrics.adjusted_mutual_info_score(truth, pred), abs=1e-9
            )


class TestAlignment:
    def test_identical_representations(self):
        groups = {"s": np.tile(RNG.normal(size=4), (3, 1))}
        assert alignment(groups) == pytest.approx(0.0, abs=1e-15)

    def test_antipodal_pairs(self):
        v = RNG.normal(size=5)
        v = v / np.linalg.norm(v)
        w = RNG.normal(size=5)
        w = w / np.linalg.norm(w)
        groups = {"a": np.stack([v, -v]), "b": np.stack([w, -w])}
        assert alignment(groups) == pytest.approx(4.0, abs=1e-12)

    def test_matches_brute_force(self):
        groups = {
            "a": RNG.normal(size=(4, 6)),
            "b": RNG.normal(size=(3, 6)),
            "c": RNG.normal(size=(1, 6)),  # singleton contributes nothing
        }
        assert alignment(groups) == pytest.approx(
            oracles.alignment_brute({k: v for k, v in groups.items() if v.shape[0] > 1}),
            abs=1e-12,
        )

    def test_scale_invariance(self):
        base = {"a": RNG.normal(size=(3, 5)), "b": RNG.normal(size=(2, 5))}
        scaled = {k: 7.3 * v for k, v in base.items()}
        assert alignment(scaled) == pytest.approx(alignment(base), abs=1e-12)

    def test_no_pairs_raises(self):
        with pytest.raises(NoPositivePairs):
            alignment({"a": RNG.normal(size=(1, 4)), "b": RNG.normal(size=(1, 4))})


class TestUniformity:
    def test_identical_is_zero(self):
        reprs = np.tile(RNG.normal(size=6), (4, 1))
        assert uniformity(reprs) == pytest.approx(0.0, abs=1e-12)

    def test_two_antipodal(self):
        v = RNG.normal(size=6)
        assert uniformity(np.stack([v, -v])) == pytest.approx(-8.0, abs=1e-12)

    def test_matches_brute_force(self):
        reprs = RNG.normal(size=(7, 5))
        assert uniformity(reprs) == pytest.approx(oracles.uniformity_brute(reprs), abs=1e-12)

    def test_scale_invariance(self):
        reprs = RNG.normal(size=(5, 4))
        assert uniformity(2.5 * reprs) == pytest.approx(uniformity(reprs), abs=1e-12)

    def test_too_few(self):
        with pytest.raises(TooFew):
            uniformity(RNG.normal(size=(1, 4)))


class TestPrequentialAverage:
    def _score(self, idx, f1):
        return WindowScore(
            window_index=idx, n_articles=10, n_pred_stories=2, n_true_stories=2,
            b3_precision=f1, b3_recall=f1, b3_f1=f1,
        )

    def test_single_window_identity(self):
        s = self._score(0, 0.7)
        assert prequential_average([s])["b3_f1"] == pytest.approx(0.7)

    def test_two_windows(self):
        out = prequential_average([self._score(0, 0.4), self._score(1, 0.8)])
        assert out["b3_f1"] == pytest.approx(0.6)

    def test_k_windows_matches_direct_mean(self):
        vals = RNG.uniform(size=9)
        out = prequential_average([self._score(i, v) for i, v in enumerate(vals)])
        assert out["b3_f1"] == pytest.approx(vals.mean())

    def test_none_values_excluded(self):
        scores = [self._score(0, 0.4), self._score(1, 0.8)]
        scores[1].ari = 0.5
        out = prequential_average(scores)
        assert out["ari"] == pytest.approx(0.5)

    def test_empty_raises(self):
        with pytest.raises(LengthMismatch):
            prequential_average([])
