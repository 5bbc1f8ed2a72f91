import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from ordtrans import estimation as est
from ordtrans.data import Dataset, build_contingency
from ordtrans.estimation import FitReport
from ordtrans.inference import (
    _argmax_rows,
    _column_distance,
    bootstrap_null,
    empirical_p_value,
    predict,
    predict_dataset,
    rank_improving_features,
    sample_outcomes,
    to_delta,
)
from ordtrans.model import DELTA, HyperParams, InvalidProbabilityError, ModelParams, transition_probability
from ordtrans.simulation import generate, reduced_table

HP = HyperParams()
NO_PEN = HyperParams(lambda11=0, lambda12=0, lambda21=0, lambda22=0)


class TestPredict:
    def test_zero_model_predicts_diagonal(self):
        p = ModelParams.zeros(3, 1, 1)
        assert predict(p, HP, 2, [0.0], [0.0])[0] == 2
        assert predict(p, HP, 1, [0.0], [0.0])[0] == 1

    def test_invalid_vector_is_an_error(self):
        p = ModelParams.zeros(3, 1, 1)
        p.beta[:, 0] = 10.0
        with pytest.raises(InvalidProbabilityError):
            predict(p, HP, 2, [0.0], [0.0])

    def test_ties_prefer_diagonal_then_smaller(self):
        dist = _column_distance(3, 3, "standard")
        P = np.array([[0.4, 0.4, 0.2], [0.4, 0.2, 0.4], [0.3, 0.3, 0.4]])
        assert _argmax_rows(P, np.array([0, 1, 2]), dist).tolist() == [0, 0, 2]
        P = np.array([[0.4, 0.2, 0.4]])
        assert _argmax_rows(P, np.array([1]), dist).tolist() == [0]
        assert _argmax_rows(np.array([[0.1, 0.45, 0.45]]), np.array([2]), dist).tolist() == [2]

    def test_delta_ties_prefer_no_change(self):
        dist = _column_distance(3, 3, DELTA)
        P = np.array([[0.4, 0.4, 0.2], [0.2, 0.4, 0.4], [0.45, 0.1, 0.45]])
        assert _argmax_rows(P, np.array([0, 2, 1]), dist).tolist() == [1, 1, 0]

    @given(arrays(np.float64, (6, 4), elements=st.sampled_from(np.linspace(0, 1, 11).tolist())))
    def test_invariant_under_increasing_transform(self, P):
        rows = np.arange(6) % 4
        dist = _column_distance(4, 4, "standard")
        base = _argmax_rows(P, rows, dist)
        assert np.array_equal(base, _argmax_rows(np.exp(P), rows, dist))
        assert np.array_equal(base, _argmax_rows(3 * P + 1, rows, dist))

    def test_batch_matches_exhaustive_argmax(self):
        from ordtrans.data import FeatureEncoder

        ds = generate([[30, 8, 2], [10, 40, 10], [2, 10, 30]], seed=3, feature_dim=2)
        enc = FeatureEncoder.fit(ds).transform(ds)
        rep = est.fit(enc, HP.with_(max_iter=500))
        pred = predict_dataset(rep.params, HP, enc)
        for k in range(enc.n_obs):
            i = int(enc.c_initial[k])
            p = transition_probability(rep.params, HP, i, enc.x[k], enc.y[k], strict=False)
            np.testing.assert_allclose(pred.probabilities[k], p, atol=1e-12)
            top = np.flatnonzero(p == p.max()) + 1
            want = min(top, key=lambda j: (abs(j - i), j))
            assert pred.levels[k] == want
        assert pred.n_invalid == int((pred.probabilities[:, -1] < 0).sum())

    def test_batch_strict_raises(self):
        p = ModelParams.zeros(3, 0, 0)
        p.beta[:, 0] = 10.0
        ds = Dataset(np.zeros((2, 0)), np.zeros((2, 0)), [1, 2], [1, 1], k=3)
        with pytest.raises(InvalidProbabilityError):
            predict_dataset(p, HP, ds, strict=True)
        assert predict_dataset(p, HP, ds).n_invalid == 2


class TestDelta:
    def test_examples(self):
        ds = Dataset(np.zeros((3, 0)), np.zeros((3, 0)), [3, 2, 1], [1, 2, 3], k=3)
        d = to_delta(ds)
        assert d.mode == DELTA
        assert d.c_final.tolist() == [1, 2, 3]  # columns for -1, 0, +1

    def test_reduced_table_counts(self):
        d = to_delta(generate(reduced_table(), feature_dim=1))
        t = build_contingency(d)
        assert t.counts.shape == (3, 3)
        assert t.counts.sum(axis=0).tolist() == [81, 192, 2]
        assert t.tolist() == [[0, 22, 0], [41, 99, 2], [40, 71, 0]]

    @given(st.lists(st.tuples(st.integers(1, 5), st.integers(1, 5)), min_size=1, max_size=60))
    def test_counts_match_standard_table(self, pairs):
        ci, cf = zip(*pairs)
        ds = Dataset(np.zeros((len(ci), 0)), np.zeros((len(ci), 0)), ci, cf, k=5)
        std = build_contingency(ds).counts
        dt = build_contingency(to_delta(ds)).counts
        assert dt[:, 0].sum() == np.tril(std, -1).sum()
        assert dt[:, 1].sum() == np.trace(std)
        assert dt[:, 2].sum() == np.triu(std, 1).sum()
        np.testing.assert_array_equal(np.sign(np.array(cf) - np.array(ci)), to_delta(ds).c_final - 2)


def _report(params, converged=True):
    return FitReport(params, 1, [0.0], converged, 0.0, 0.0)


class TestRanking:
    def test_improvement_feature_ranks_first(self):
        rng = np.random.default_rng(5)
        n = 400
        ci = rng.integers(2, 4, n)
        change = rng.choice([-1, 0, 1], size=n, p=[0.35, 0.5, 0.15])
        cf = np.clip(ci + change, 1, 3)
        improved = (cf < ci).astype(float)
        y = np.column_stack([rng.normal(size=n), improved + rng.normal(scale=0.3, size=n)])
        ds = to_delta(Dataset(np.zeros((n, 0)), y, ci, cf, k=3))
        rep = est.fit(ds, HP.with_(max_iter=30000))
        assert rep.converged
        r = rank_improving_features(rep, ["noise", "signal"])
        assert r.names[0] == "signal"
        assert list(r.coefficients) == sorted(r.coefficients)

    def test_untrained_ties_keep_input_order(self):
        p = ModelParams.zeros(3, 0, 3, DELTA)
        r = rank_improving_features(_report(p), ["a", "b", "c"])
        assert r.names == ("a", "b", "c")

    def test_needs_convergence(self):
        with pytest.raises(ValueError, match="did not converge"):
            rank_improving_features(_report(ModelParams.zeros(3, 0, 1, DELTA), False), ["a"])

    def test_needs_delta_fit(self):
        with pytest.raises(ValueError):
            rank_improving_features(_report(ModelParams.zeros(3, 0, 1)), ["a"])

    def test_table_output(self, tmp_path):
        p = ModelParams.zeros(3, 0, 2, DELTA)
        p.delta[0, 1:] = [0.5, -4.08]
        r = rank_improving_features(_report(p), ["Aspirin", "Piracetam"], [0.2, 0.01])
        r.to_csv(tmp_path / "r.csv")
        lines = (tmp_path / "r.csv").read_text().splitlines()
        assert lines[0] == "Treatment,Coefficient,P-Value"
        assert lines[1].startswith("Piracetam,-4.08,0.01")
        assert "| Piracetam | -4.080 | 0.010 |" in r.to_markdown()


class TestPValue:
    def test_formula(self):
        draws = np.r_[np.full(10, 2.0), np.full(490, 0.0)]
        assert empirical_p_value(1.0, draws) == pytest.approx(0.04)

    def test_median_gives_one(self):
        draws = np.r_[np.arange(50.0), np.arange(51.0, 101.0)]
        assert empirical_p_value(50.0, draws) == pytest.approx(1.0)

    def test_strict_inequalities(self):
        assert empirical_p_value(1.0, [1.0, 1.0, 1.0]) == 0.0

    @given(st.floats(-10, 10), st.lists(st.floats(-10, 10), min_size=1, max_size=50))
    def test_in_unit_interval(self, t, draws):
        assert 0.0 <= empirical_p_value(t, draws) <= 1.0

    def test_sampling_respects_probabilities(self):
        P = np.tile([0.2, 0.5, 0.3], (20000, 1))
        draws = sample_outcomes(P, np.random.default_rng(0))
        np.testing.assert_allclose(np.bincount(draws, minlength=3) / 20000, [0.2, 0.5, 0.3], atol=0.015)

    def test_negative_entries_never_sampled(self):
        P = np.tile([0.7, 0.5, -0.2], (1000, 1))
        assert (sample_outcomes(P, np.random.default_rng(0)) != 2).all()


def _tiny():
    rng = np.random.default_rng(11)
    n = 80
    truth = ModelParams(np.array([[0.0, 0.5], [-0.3, 0.4]]), np.array([[0.2, 0.8]]))
    X = rng.uniform(-1, 1, (n, 1))
    Y = rng.normal(size=(n, 1))
    ci = rng.integers(1, 3, n)
    P = np.array([transition_probability(truth, NO_PEN, int(i), x, y) for i, x, y in zip(ci, X, Y)])
    cf = sample_outcomes(P, rng) + 1
    d = est.design(Dataset(X, Y, ci, cf, k=2))
    hp = NO_PEN.with_(eta=0.05)
    return d, hp, est.fit(d, hp).params


class TestBootstrap:
    def test_granularity_and_range(self):
        d, hp, fitted = _tiny()
        res = bootstrap_null(d, hp, fitted, (1, 1), n_boot=10, seed=1)
        assert 0 <= res.p_value <= 1
        assert round(res.p_value / 0.2, 9) == int(round(res.p_value / 0.2))
        assert res.null_draws.size == 10 and res.dropped == 0

    def test_reproducible_and_thread_independent(self):
        d, hp, fitted = _tiny()
        a = bootstrap_null(d, hp, fitted, (1, 1), n_boot=8, seed=3)
        b = bootstrap_null(d, hp, fitted, (1, 1), n_boot=8, seed=3, threads=3)
        np.testing.assert_array_equal(a.null_draws, b.null_draws)

    def test_replicate_streams_are_nested(self):
        d, hp, fitted = _tiny()
        a = bootstrap_null(d, hp, fitted, (1, 1), n_boot=6, seed=2)
        b = bootstrap_null(d, hp, fitted, (1, 1), n_boot=12, seed=2)
        np.testing.assert_array_equal(a.null_draws, b.null_draws[:6])

    def test_monte_carlo_consistency(self):
        # doubling B moves p by Monte Carlo noise of order 1/sqrt(B)
        d, hp, fitted = _tiny()
        diffs = []
        for seed in range(3):
            a = bootstrap_null(d, hp, fitted, (1, 1), n_boot=20, seed=seed).p_value
            b = bootstrap_null(d, hp, fitted, (1, 1), n_boot=40, seed=seed).p_value
            diffs.append(abs(a - b))
        assert np.mean(diffs) <= 2 / np.sqrt(20)

    def test_strong_effect_is_significant(self):
        d, hp, fitted = _tiny()
        assert fitted.delta[0, 1] > 0.3
        assert bootstrap_null(d, hp, fitted, (1, 1), n_boot=40, seed=0).p_value < 0.1

    def test_bad_target(self):
        d, hp, fitted = _tiny()
        with pytest.raises(ValueError):
            bootstrap_null(d, hp, fitted, (0, 1), n_boot=2)
        with pytest.raises(ValueError):
            bootstrap_null(d, hp, fitted, (1, 2), n_boot=2)

    def test_too_many_divergent_replicates(self, monkeypatch):
        from ordtrans import inference
        from ordtrans.optim import DivergenceError

        def boom(*a, **k):
            raise DivergenceError("x")

        d, hp, fitted = _tiny()
        monkeypatch.setattr(inference, "fit", boom)
        with pytest.raises(RuntimeError, match="diverged"):
            bootstrap_null(d, hp, fitted, (1, 1), n_boot=5)
