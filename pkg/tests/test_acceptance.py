"""End-to-end acceptance gate.

One test per criterion, heavyweight runs shared through module-scoped
fixtures.  Each test prints a single summary line; the pytest verdict for
the test is the pass/fail line for the criterion.
"""

import dataclasses
import math
import os
import time

import numpy as np
import pytest

from norh import bench, cli
from norh import hybrid as hy
from norh import models as md
from norh import neural as nn
from norh import stochastic as st

CONFIG_DIR = os.path.join(os.path.dirname(__file__), "..", "configs")
TRAINING_SEEDS = (3, 103, 203)

ODE_EXACT = 0.003539
MV_EXACT = 2.3263e-4


def _line(num, ok, detail):
    print(f"criterion {num}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def _seed_sweep(config_name, out_root=None):
    """Run one benchmark config across the three training seeds."""
    cfg0 = bench.parse_config(os.path.join(CONFIG_DIR, config_name))
    runs = []
    for tseed in TRAINING_SEEDS:
        cfg = dataclasses.replace(
            cfg0, seeds=dataclasses.replace(cfg0.seeds, training=tseed))
        out = None if out_root is None else os.path.join(out_root, f"t{tseed}")
        report, result = bench.run_experiment(cfg, out_dir=out)
        runs.append((cfg, report, result, out))
    return runs


@pytest.fixture(scope="module")
def ode_runs(tmp_path_factory):
    root = tmp_path_factory.mktemp("ode")
    return _seed_sweep("ode.cfg", str(root))


@pytest.fixture(scope="module")
def mv_runs():
    return _seed_sweep("multivariate.cfg")


@pytest.fixture(scope="module")
def hh_runs():
    return _seed_sweep("helmholtz1d.cfg")


def test_criterion_01_ode_analytic_anchor(capsys):
    assert cli.cli(["oracle", "--experiment", "ode"]) == 0
    value = float(capsys.readouterr().out)
    with capsys.disabled():
        _line(1, abs(value - ODE_EXACT) <= 5e-6,
              f"oracle ode = {value:.6g}, target {ODE_EXACT} +/- 5e-6")


def test_criterion_02_ode_mcs(capsys):
    cfg = bench.parse_config(os.path.join(CONFIG_DIR, "ode.cfg"))
    t0 = time.perf_counter()
    report, _ = bench.run_experiment(cfg, method="mcs")
    wall = time.perf_counter() - t0
    ok = 0.00336 <= report.p_f <= 0.00372 and wall <= 30.0
    with capsys.disabled():
        _line(2, ok, f"MCS M=1e6 p_f = {report.p_f:.6g} in [0.00336, 0.00372], "
              f"wall {wall:.1f}s <= 30s")


def test_criterion_03_ode_noh_end_to_end(ode_runs, capsys):
    details = []
    ok = True
    total_wall = 0.0
    for cfg, report, result, _ in ode_runs:
        rel = report.rel_error
        ok &= rel <= 0.15 and report.pf_calls_evaluating <= 5000
        total_wall += report.wall_time
        details.append(f"seed {cfg.seeds.training}: rel {100 * rel:.2f}%, "
                       f"eval {report.pf_calls_evaluating}")
    ok &= total_wall <= 600.0
    with capsys.disabled():
        _line(3, ok, "; ".join(details) + f"; total wall {total_wall:.0f}s <= 600s")


def test_criterion_04_multivariate_analytic_anchor(capsys):
    value = md.analytic_failure_probability(md.MultivariateLinearModel())
    anchor_ok = abs(value - MV_EXACT) <= 1e-8
    # the published Monte Carlo figure must be statistically consistent
    # with the exact tail at its own sample size
    published, m_published = 2.218e-4, 5 * 10**6
    se = math.sqrt(value * (1 - value) / m_published)
    consistent = abs(published - value) <= 3 * se
    with capsys.disabled():
        _line(4, anchor_ok and consistent,
              f"1 - Phi(3.5) = {value:.6e} (target {MV_EXACT:.4e} +/- 1e-8); "
              f"published 2.218e-4 within 3 SE ({3 * se:.2e}) of exact")


def test_criterion_05_multivariate_noh(mv_runs, capsys):
    details = []
    ok = True
    total_wall = 0.0
    for cfg, report, result, _ in mv_runs:
        rel = report.rel_error
        ok &= rel <= 0.25 and report.pf_calls_evaluating <= 2000
        total_wall += report.wall_time
        details.append(f"seed {cfg.seeds.training}: rel {100 * rel:.2f}%, "
                       f"eval {report.pf_calls_evaluating}")
    ok &= total_wall <= 900.0
    with capsys.disabled():
        _line(5, ok, "; ".join(details) + f"; total wall {total_wall:.0f}s <= 900s")


class _SignFlip:
    """Adversarial surrogate: the true model's value with the sign flipped."""

    def __init__(self, model):
        self.model = model

    def predict_batch(self, Z):
        return -self.model.evaluate_batch(st.SampleMatrix(np.asarray(Z)))


def test_criterion_06_exhaustion_equivalence(capsys):
    M = 10**4
    cases = [
        ("ode", md.OdeDecayModel(), md.OdeDecayModel(),
         st.RandomVectorSpec.iid(1, -2.0, 1.0)),
        ("multivariate", md.MultivariateLinearModel(), md.MultivariateLinearModel(),
         st.RandomVectorSpec.iid(50, 0.0, 1.0)),
        ("helmholtz1d", md.Helmholtz1dModel(), md.Helmholtz1dModel(),
         st.RandomVectorSpec.iid(1, 2.5, 0.3)),
    ]
    t0 = time.perf_counter()
    details = []
    ok = True
    for name, model, flipped, spec in cases:
        samples = st.sample_random_vector(spec, M, seed=17)
        plain = hy.mcs_estimate(_fresh(model), samples)
        cfg = hy.HybridConfig(delta_m=25, epsilon=0.0, patience=10**9)
        res = hy.hybrid_iterate(_SignFlip(flipped), model, samples, cfg)
        exact = res.p_f == plain and res.terminated_by == "exhausted"
        bounded = all(abs(r.delta_p) <= cfg.delta_m / M + 1e-15 for r in res.trace)
        ok &= exact and bounded
        details.append(f"{name}: hybrid {res.p_f:.6g} == mcs {plain:.6g}, "
                       f"deltas bounded {bounded}")
    wall = time.perf_counter() - t0
    ok &= wall <= 60.0
    with capsys.disabled():
        _line(6, ok, "; ".join(details) + f"; wall {wall:.1f}s <= 60s")


def _fresh(model):
    """Independent copy of a benchmark model for oracle comparisons."""
    if isinstance(model, md.OdeDecayModel):
        return md.OdeDecayModel(s0=model.s0, t=model.t, sd=model.sd)
    if isinstance(model, md.MultivariateLinearModel):
        return md.MultivariateLinearModel(n=model.n, beta=model.beta)
    return md.Helmholtz1dModel(grid_points=model.grid_points,
                               probe=model.probe, threshold=model.threshold)


def test_criterion_07_hand_trace(capsys):
    class Table(md.LimitStateModel):
        def __init__(self, values):
            super().__init__(dims=1)
            self.values = values

        def _g(self, z):
            return self.values[int(z[0])]

    class Surr:
        values = np.array([1.0, -1.0, -2.0, 3.0])

        def predict_batch(self, Z):
            return self.values[Z[:, 0].astype(int)]

    samples = st.SampleMatrix(np.arange(4.0).reshape(-1, 1))
    res = hy.hybrid_iterate(Surr(), Table([-1.0, 1.0, 2.0, -3.0]), samples,
                            hy.HybridConfig(delta_m=2, patience=5))
    deltas = [r.delta_p for r in res.trace]
    ok = res.p_f == 0.5 and res.p_f_initial == 0.5 and deltas == [0.0, 0.0]
    with capsys.disabled():
        _line(7, ok, f"p_f = {res.p_f}, delta_P sequence {deltas}")


def test_criterion_08_gradient_exactness(capsys):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    worst = 0.0
    for _ in range(20):
        widths = [int(rng.integers(1, 6)) for _ in range(int(rng.integers(3, 5)))]
        net = nn.init_network(widths, "tanh", seed=int(rng.integers(0, 2**31)))
        rows = int(rng.integers(1, 6))
        data = nn.Dataset(rng.normal(size=(rows, widths[0])),
                          rng.normal(size=(rows, widths[-1])))
        _, (dW, db) = nn.mse_loss_and_gradients(net, data)
        h = 1e-5
        for arrs, grads in ((net.weights, dW), (net.biases, db)):
            for arr, grad in zip(arrs, grads):
                for idx in np.ndindex(arr.shape):
                    orig = arr[idx]
                    arr[idx] = orig + h
                    lp, _ = nn.mse_loss_and_gradients(net, data)
                    arr[idx] = orig - h
                    lm, _ = nn.mse_loss_and_gradients(net, data)
                    arr[idx] = orig
                    fd = (lp - lm) / (2 * h)
                    denom = max(abs(fd), abs(grad[idx]), 1e-8)
                    worst = max(worst, abs(grad[idx] - fd) / denom)
    wall = time.perf_counter() - t0
    ok = worst <= 1e-4 and wall <= 10.0
    with capsys.disabled():
        _line(8, ok, f"20 networks, worst relative deviation {worst:.2e} <= 1e-4, "
              f"wall {wall:.1f}s")


def test_criterion_09_helmholtz(hh_runs, capsys):
    # part one: observed convergence order of the solver
    kappa = 2.5
    errors = []
    for g in (65, 129, 257):
        f = lambda x: (math.pi**2 - kappa**2) * math.sin(math.pi * x)
        u = md.helmholtz_solve_1d(kappa, g, forcing=f)
        x = np.linspace(0, 1, g)
        errors.append(np.abs(u - np.sin(math.pi * x)).max())
    orders = [math.log2(a / b) for a, b in zip(errors, errors[1:])]
    order_ok = all(1.9 <= o <= 2.1 for o in orders)

    # part two: hybrid-with-operator-surrogate accuracy against the frozen
    # Monte Carlo reference
    details = []
    ok = order_ok
    total_wall = 0.0
    for cfg, report, result, _ in hh_runs:
        rel = report.rel_error
        ok &= rel <= 0.25
        total_wall += report.wall_time
        details.append(f"seed {cfg.seeds.training}: rel {100 * rel:.2f}%")
    ok &= total_wall <= 600.0
    with capsys.disabled():
        _line(9, ok, f"orders {[f'{o:.2f}' for o in orders]}; " + "; ".join(details)
              + f"; total wall {total_wall:.0f}s <= 600s")


def test_criterion_10_pf_call_ledger(ode_runs, mv_runs, hh_runs, capsys):
    ok = True
    checked = 0
    for runs in (ode_runs, mv_runs, hh_runs):
        for cfg, report, result, _ in runs:
            total = report.pf_calls_training + report.pf_calls_evaluating
            ok &= total == report.model_pf_calls
            checked += 1
    with capsys.disabled():
        _line(10, ok, f"{checked} runs: training + evaluating PF calls equal "
              "the model counter exactly")


def test_criterion_11_determinism(ode_runs, tmp_path, capsys):
    cfg, _, _, out_first = ode_runs[0]
    out_again = str(tmp_path / "again")
    bench.run_experiment(cfg, out_dir=out_again)
    same = True
    for name in ("report.csv", "trace.csv"):
        a = open(os.path.join(out_first, name), "rb").read()
        b = open(os.path.join(out_again, name), "rb").read()
        same &= a == b
    with capsys.disabled():
        _line(11, same, "repeated run produced byte-identical report.csv and trace.csv")
