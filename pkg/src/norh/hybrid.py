"""Failure-probability estimators.

Plain Monte Carlo, the iterative hybrid loop that re-evaluates samples in
ascending order of the surrogate magnitude |g_hat|, and the surrogate-error
diagnostic gamma_N.  Run to exhaustion the hybrid estimate equals the plain
Monte Carlo estimate on the same samples, bit for bit.
"""

from dataclasses import dataclass, field

import numpy as np

from .models import LimitStateModel, ModelEvaluationError
from .stochastic import SampleMatrix


@dataclass(frozen=True)
class HybridConfig:
    delta_m: int = 25          # samples re-evaluated per iteration
    epsilon: float = 0.0       # stopping tolerance on |delta_P|
    patience: int = 5          # consecutive small delta_P needed to stop
    max_pf_calls: int | None = None

    def __post_init__(self):
        if self.delta_m < 1:
            raise ValueError("delta_m must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.max_pf_calls is not None and self.max_pf_calls < 1:
            raise ValueError("max_pf_calls must be >= 1 when set")


@dataclass(frozen=True)
class IterationRecord:
    k: int
    delta_p: float
    p_f: float
    pf_calls_cum: int


@dataclass
class HybridResult:
    p_f: float
    p_f_initial: float
    iterations: int
    pf_calls_evaluating: int
    trace: list = field(default_factory=list)
    terminated_by: str = "exhausted"   # patience | exhausted | budget


class HybridIterationError(ModelEvaluationError):
    """Model failure mid-batch; carries the trace accumulated so far."""

    def __init__(self, message: str, partial_trace: list, sample_index: int):
        super().__init__(message)
        self.partial_trace = partial_trace
        self.sample_index = sample_index


def _predictions(evaluator, samples: SampleMatrix) -> np.ndarray:
    if isinstance(evaluator, LimitStateModel):
        return evaluator.evaluate_batch(samples)
    if hasattr(evaluator, "predict_batch"):
        return np.asarray(evaluator.predict_batch(samples.data), dtype=np.float64)
    return np.array([float(evaluator(row)) for row in samples.data])


def mcs_estimate(evaluator, samples: SampleMatrix) -> float:
    """Fraction of samples with evaluator(z) < 0.  Costs one PF call per
    sample for a true model and none for a surrogate."""
    values = _predictions(evaluator, samples)
    return float(np.count_nonzero(values < 0.0)) / samples.rows


def hybrid_iterate(surrogate, model: LimitStateModel, samples: SampleMatrix,
                   cfg: HybridConfig) -> HybridResult:
    """Iterative hybrid estimator.

    Starts from the pure-surrogate estimate, then replaces surrogate
    decisions with true-model decisions in batches of delta_m samples taken
    in ascending |g_hat|, stopping once |delta_P| <= epsilon held for
    `patience` consecutive iterations (at least one batch always runs).
    """
    M = samples.rows
    g_hat = _predictions(surrogate, samples)
    surr_fail = g_hat < 0.0
    # integer failure count so the exhausted loop reproduces plain MCS exactly
    n_fail = int(np.count_nonzero(surr_fail))
    p_f_initial = n_fail / M
    p_f = p_f_initial

    # stable sort: ties broken by original sample index
    order = np.argsort(np.abs(g_hat), kind="stable")

    trace: list[IterationRecord] = []
    small_streak = 0
    calls = 0
    terminated_by = "exhausted"
    n_batches = -(-M // cfg.delta_m)

    for k in range(1, n_batches + 1):
        batch = order[(k - 1) * cfg.delta_m:k * cfg.delta_m]
        d_count = 0
        for j in batch:
            try:
                g_true = model.evaluate(samples.data[j])
            except ModelEvaluationError as exc:
                raise HybridIterationError(
                    f"model failed at sample {j} in iteration {k}: {exc}",
                    partial_trace=trace, sample_index=int(j),
                ) from exc
            calls += 1
            d_count += (-1 if surr_fail[j] else 0) + (1 if g_true < 0.0 else 0)
        delta_p = d_count / M
        n_fail += d_count
        p_f = n_fail / M
        trace.append(IterationRecord(k, delta_p, p_f, calls))

        if abs(delta_p) <= cfg.epsilon:
            small_streak += 1
            if small_streak >= cfg.patience:
                terminated_by = "patience"
                break
        else:
            small_streak = 0
        if cfg.max_pf_calls is not None and calls >= cfg.max_pf_calls:
            terminated_by = "budget"
            break

    return HybridResult(p_f=p_f, p_f_initial=p_f_initial, iterations=len(trace),
                        pf_calls_evaluating=calls, trace=trace,
                        terminated_by=terminated_by)


def estimate_gamma_n(surrogate, model: LimitStateModel, samples: SampleMatrix,
                     p_norm: float = 2.0, epsilon: float = 1e-3) -> float:
    """Monte Carlo estimate of the suspicious-region width guaranteeing an
    estimator error below epsilon: eps^(-1/p) * ||g - g_hat||_{L^p}.

    Diagnostic only; costs one PF call per sample.
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be > 0")
    if p_norm < 1:
        raise ValueError("p_norm must be >= 1")
    g = _predictions(model, samples)
    g_hat = _predictions(surrogate, samples)
    lp = float(np.mean(np.abs(g - g_hat) ** p_norm)) ** (1.0 / p_norm)
    return lp / epsilon ** (1.0 / p_norm)


def trace_to_csv(trace, path) -> None:
    """Per-iteration convergence trace as CSV."""
    lines = ["k,delta_P,p_f_k,pf_calls_cum"]
    for rec in trace:
        lines.append(f"{rec.k},{rec.delta_p:.17g},{rec.p_f:.17g},{rec.pf_calls_cum}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
