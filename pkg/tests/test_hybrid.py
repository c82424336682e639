import math

import numpy as np
import pytest

from norh import hybrid as hy
from norh import models as md
from norh import stochastic as st


class TableModel(md.LimitStateModel):
    """g(z) looked up from a table indexed by z[0]."""

    def __init__(self, values):
        super().__init__(dims=1)
        self.values = list(values)

    def _g(self, z):
        return self.values[int(z[0])]


class TableSurrogate:
    def __init__(self, values):
        self.values = np.asarray(values, dtype=float)

    def predict_batch(self, Z):
        return self.values[Z[:, 0].astype(int)]


def index_samples(n):
    return st.SampleMatrix(np.arange(n, dtype=float).reshape(-1, 1))


class FailingModel(md.LimitStateModel):
    def __init__(self, fail_at):
        super().__init__(dims=1)
        self.fail_at = fail_at

    def _g(self, z):
        if int(z[0]) == self.fail_at:
            raise md.ModelEvaluationError("simulated crash")
        return 1.0


class TestMcsEstimate:
    def test_fraction_below_zero(self):
        model = TableModel([-1.0, 1.0, -2.0, 0.0])
        assert hy.mcs_estimate(model, index_samples(4)) == 0.5
        assert model.call_count == 4

    def test_zero_is_safe(self):
        model = TableModel([0.0, 0.0])
        assert hy.mcs_estimate(model, index_samples(2)) == 0.0

    def test_surrogate_costs_nothing(self):
        surr = TableSurrogate([-1.0, 1.0])
        assert hy.mcs_estimate(surr, index_samples(2)) == 0.5


class TestHybridConfig:
    def test_invalid_fields(self):
        with pytest.raises(ValueError):
            hy.HybridConfig(delta_m=0)
        with pytest.raises(ValueError):
            hy.HybridConfig(epsilon=-0.1)
        with pytest.raises(ValueError):
            hy.HybridConfig(patience=0)
        with pytest.raises(ValueError):
            hy.HybridConfig(max_pf_calls=0)


class TestHandTrace:
    """Four samples, two batches, worked by hand.

    g = [-1, 1, 2, -3], g_hat = [1, -1, -2, 3], delta_m = 2.
    Sorted by |g_hat| with ties by index: 0, 1, 2, 3.
    Initial estimate 2/4.  Batch one flips sample 0 to failing and sample 1
    to safe (delta_P = 0); batch two flips 2 to safe and 3 to failing
    (delta_P = 0).  The estimate stays 0.5 throughout.
    """

    G_TRUE = [-1.0, 1.0, 2.0, -3.0]
    G_HAT = [1.0, -1.0, -2.0, 3.0]

    def _run(self, patience=5, epsilon=0.0):
        model = TableModel(self.G_TRUE)
        surr = TableSurrogate(self.G_HAT)
        cfg = hy.HybridConfig(delta_m=2, epsilon=epsilon, patience=patience)
        return hy.hybrid_iterate(surr, model, index_samples(4), cfg), model

    def test_exhaustive_trace(self):
        res, model = self._run(patience=5)
        assert res.p_f_initial == 0.5
        assert res.p_f == 0.5
        assert res.iterations == 2
        assert res.pf_calls_evaluating == 4
        assert model.call_count == 4
        assert res.terminated_by == "exhausted"
        assert [(r.k, r.delta_p, r.p_f, r.pf_calls_cum) for r in res.trace] == [
            (1, 0.0, 0.5, 2),
            (2, 0.0, 0.5, 4),
        ]

    def test_patience_one_stops_after_first_batch(self):
        res, model = self._run(patience=1)
        assert res.iterations == 1
        assert res.pf_calls_evaluating == 2
        assert res.p_f == 0.5
        assert res.terminated_by == "patience"


class TestOrdering:
    def test_reevaluation_order_by_surrogate_magnitude(self):
        seen = []

        class Recorder(md.LimitStateModel):
            def __init__(self):
                super().__init__(dims=1)

            def _g(self, z):
                seen.append(int(z[0]))
                return 1.0

        surr = TableSurrogate([3.0, -0.5, 2.0, 0.5, -1.0])
        cfg = hy.HybridConfig(delta_m=1, epsilon=0.0, patience=10)
        hy.hybrid_iterate(surr, Recorder(), index_samples(5), cfg)
        assert seen == [1, 3, 4, 2, 0]

    def test_ties_broken_by_index(self):
        seen = []

        class Recorder(md.LimitStateModel):
            def __init__(self):
                super().__init__(dims=1)

            def _g(self, z):
                seen.append(int(z[0]))
                return 1.0

        surr = TableSurrogate([1.0, -1.0, 1.0, -1.0])
        hy.hybrid_iterate(surr, Recorder(), index_samples(4),
                          hy.HybridConfig(delta_m=4, patience=1))
        assert seen == [0, 1, 2, 3]


class TestExhaustionEquivalence:
    def test_sign_flipped_surrogate_matches_mcs_bit_exact(self):
        # adversarial surrogate: wrong sign everywhere, run to exhaustion
        M = 10**4
        spec = st.RandomVectorSpec.iid(1, -2.0, 1.0)
        samples = st.sample_random_vector(spec, M, seed=11)
        plain = hy.mcs_estimate(md.OdeDecayModel(), samples)

        class SignFlip:
            def predict_batch(self, Z):
                return -(np.exp(-Z[:, 0]) - 0.5)

        model = md.OdeDecayModel()
        cfg = hy.HybridConfig(delta_m=25, epsilon=0.0, patience=10**9)
        res = hy.hybrid_iterate(SignFlip(), model, samples, cfg)
        assert res.terminated_by == "exhausted"
        assert res.pf_calls_evaluating == M
        assert res.p_f == plain

    def test_perfect_surrogate_stops_early(self):
        M = 2000
        spec = st.RandomVectorSpec.iid(1, -2.0, 1.0)
        samples = st.sample_random_vector(spec, M, seed=12)
        model = md.OdeDecayModel()
        truth = md.OdeDecayModel()

        class Perfect:
            def predict_batch(self, Z):
                return np.exp(-Z[:, 0]) - 0.5

        cfg = hy.HybridConfig(delta_m=25, epsilon=0.0, patience=3)
        res = hy.hybrid_iterate(Perfect(), model, samples, cfg)
        assert res.terminated_by == "patience"
        assert res.pf_calls_evaluating == 75
        assert res.p_f == hy.mcs_estimate(truth, samples)
        assert all(r.delta_p == 0.0 for r in res.trace)


class TestStepBound:
    def test_delta_p_bounded_by_batch_fraction(self):
        M = 500
        rng = np.random.default_rng(3)
        g_true = rng.normal(size=M)
        g_hat = g_true + rng.normal(scale=2.0, size=M)
        model = TableModel(g_true)
        surr = TableSurrogate(g_hat)
        cfg = hy.HybridConfig(delta_m=25, patience=10**9)
        res = hy.hybrid_iterate(surr, model, index_samples(M), cfg)
        for rec in res.trace:
            assert abs(rec.delta_p) <= cfg.delta_m / M + 1e-15


class TestBudget:
    def test_max_pf_calls(self):
        model = TableModel([1.0] * 100)
        surr = TableSurrogate([1.0] * 100)
        cfg = hy.HybridConfig(delta_m=10, epsilon=-0.0, patience=10**9,
                              max_pf_calls=30)
        res = hy.hybrid_iterate(surr, model, index_samples(100), cfg)
        assert res.terminated_by == "budget"
        assert res.pf_calls_evaluating == 30
        assert model.call_count == 30


class TestFailurePropagation:
    def test_partial_trace_preserved(self):
        model = FailingModel(fail_at=7)
        surr = TableSurrogate(list(range(1, 11)))  # order = index order
        cfg = hy.HybridConfig(delta_m=2, patience=10**9)
        with pytest.raises(hy.HybridIterationError) as exc_info:
            hy.hybrid_iterate(surr, model, index_samples(10), cfg)
        err = exc_info.value
        assert err.sample_index == 7
        assert len(err.partial_trace) == 3  # batches {0,1} {2,3} {4,5} done
        assert model.call_count == 8  # 6 successes + sample 6 + the failure


class TestGammaN:
    def test_exact_surrogate_gives_zero(self):
        model = TableModel([1.0, -1.0, 2.0])
        surr = TableSurrogate([1.0, -1.0, 2.0])
        assert hy.estimate_gamma_n(surr, model, index_samples(3)) == 0.0

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(8)
        g_true = rng.normal(size=40)
        g_hat = g_true + rng.normal(scale=0.3, size=40)
        model = TableModel(g_true)
        surr = TableSurrogate(g_hat)
        for p, eps in ((1.0, 1e-3), (2.0, 1e-3), (2.0, 0.01)):
            got = hy.estimate_gamma_n(surr, model, index_samples(40),
                                      p_norm=p, epsilon=eps)
            lp = (sum(abs(a - b) ** p for a, b in zip(g_true, g_hat)) / 40) ** (1 / p)
            expect = lp / eps ** (1 / p)
            assert got == pytest.approx(expect, rel=1e-12)

    def test_invalid_args(self):
        model = TableModel([1.0])
        surr = TableSurrogate([1.0])
        with pytest.raises(ValueError):
            hy.estimate_gamma_n(surr, model, index_samples(1), epsilon=0.0)
        with pytest.raises(ValueError):
            hy.estimate_gamma_n(surr, model, index_samples(1), p_norm=0.5)


class TestTraceCsv:
    def test_round_trip_text(self, tmp_path):
        trace = [hy.IterationRecord(1, 0.001, 0.0035, 25),
                 hy.IterationRecord(2, -0.0005, 0.003, 50)]
        path = tmp_path / "trace.csv"
        hy.trace_to_csv(trace, path)
        lines = path.read_text().splitlines()
        assert lines[0] == "k,delta_P,p_f_k,pf_calls_cum"
        # values are written with enough digits to round-trip float64
        p1 = lines[1].split(",")
        assert p1[0] == "1" and p1[3] == "25"
        assert float(p1[1]) == 0.001 and float(p1[2]) == 0.0035
        p2 = lines[2].split(",")
        assert float(p2[1]) == -0.0005 and p2[3] == "50"
