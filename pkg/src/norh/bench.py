"""Experiment harness: config parsing, end-to-end runs, report tables.

A run wires sample generation, optional surrogate training, and the hybrid
or plain Monte Carlo estimator together, taking every PF-call number from
the model's own counter.  Report and trace files are byte-stable under
fixed seeds.
"""

import os
import shlex
import tempfile
import time
from dataclasses import dataclass, field

from . import hybrid as hybrid_mod
from . import models as models_mod
from . import stochastic, surrogate as surrogate_mod
from .hybrid import HybridConfig
from .stochastic import RandomVectorSpec

# Frozen Monte Carlo reference for the 1-D Helmholtz benchmark: 10^6 samples
# of kappa ~ N(2.5, 0.3^2) (seed 20250823, same generator as the bench),
# 2049-point grid, threshold 6.0, probe 0.5.  Recompute with
# tools/freeze_helmholtz_reference.py after any change to those defaults.
HELMHOLTZ1D_REFERENCE_PF = 5.308e-03

EXPERIMENTS = ("ode", "multivariate", "helmholtz1d", "external")
SURROGATE_KINDS = ("noh", "nh", "none")


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration."""


@dataclass(frozen=True)
class Seeds:
    sampling: int = 1
    init: int = 2
    training: int = 3


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str = "ode"
    dims: int = 1
    mean: float = -2.0
    stddev: float = 1.0
    M: int = 1_000_000
    beta: float = 3.5                 # multivariate only
    grid_points: int = 257            # helmholtz1d only
    probe: float = 0.5
    threshold: float = 6.0
    command: str = ""                 # external only
    surrogate_kind: str = "noh"
    N: int = 500
    P: int = 500
    k: float = 4.0
    sensors: int = 100
    latent: int = 40
    epochs: int = 40
    batch_size: int = 256
    learning_rate: float = 0.001
    hybrid: HybridConfig = field(default_factory=HybridConfig)
    seeds: Seeds = field(default_factory=Seeds)

    def validate(self) -> None:
        problems = []
        if self.experiment not in EXPERIMENTS:
            problems.append(f"experiment must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if self.surrogate_kind not in SURROGATE_KINDS:
            problems.append(f"surrogate kind must be one of {SURROGATE_KINDS}")
        for name in ("dims", "M", "N", "P", "sensors", "latent", "epochs",
                     "batch_size", "grid_points"):
            if getattr(self, name) < 1 and not (name == "epochs" and self.epochs == 0):
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        if self.stddev < 0:
            problems.append(f"stddev must be non-negative, got {self.stddev}")
        if self.k < 0:
            problems.append(f"k must be non-negative, got {self.k}")
        if self.learning_rate < 0:
            problems.append(f"learning_rate must be non-negative, got {self.learning_rate}")
        if self.experiment == "external" and not self.command:
            problems.append("external experiment requires a command")
        if problems:
            raise ConfigError("; ".join(problems))


@dataclass
class RunReport:
    method: str
    p_f: float
    pf_calls_training: int
    pf_calls_evaluating: int
    reference: float | None
    reference_provenance: str
    wall_time: float
    model_pf_calls: int = -1   # final model counter; not written to CSV

    @property
    def rel_error(self) -> float | None:
        if self.reference is None or self.reference <= 0:
            return None
        return abs(self.p_f - self.reference) / self.reference


# config keys: (section, key) -> (attribute, converter)
_SCHEMA = {
    ("experiment", "name"): ("experiment", str),
    ("experiment", "dims"): ("dims", int),
    ("experiment", "mean"): ("mean", float),
    ("experiment", "stddev"): ("stddev", float),
    ("experiment", "M"): ("M", int),
    ("experiment", "beta"): ("beta", float),
    ("experiment", "grid_points"): ("grid_points", int),
    ("experiment", "probe"): ("probe", float),
    ("experiment", "threshold"): ("threshold", float),
    ("experiment", "command"): ("command", str),
    ("surrogate", "kind"): ("surrogate_kind", str),
    ("surrogate", "N"): ("N", int),
    ("surrogate", "P"): ("P", int),
    ("surrogate", "k"): ("k", float),
    ("surrogate", "sensors"): ("sensors", int),
    ("surrogate", "latent"): ("latent", int),
    ("training", "epochs"): ("epochs", int),
    ("training", "batch_size"): ("batch_size", int),
    ("training", "learning_rate"): ("learning_rate", float),
    ("hybrid", "delta_M"): ("hybrid.delta_m", int),
    ("hybrid", "epsilon"): ("hybrid.epsilon", float),
    ("hybrid", "patience"): ("hybrid.patience", int),
    ("hybrid", "max_pf_calls"): ("hybrid.max_pf_calls", int),
    ("seeds", "sampling"): ("seeds.sampling", int),
    ("seeds", "init"): ("seeds.init", int),
    ("seeds", "training"): ("seeds.training", int),
}

# per-experiment defaults layered over the dataclass defaults
_EXPERIMENT_DEFAULTS = {
    "ode": dict(dims=1, mean=-2.0, stddev=1.0, M=1_000_000, N=500, P=500,
                epochs=80, batch_size=256, learning_rate=0.005),
    "multivariate": dict(dims=50, mean=0.0, stddev=1.0, M=1_000_000, N=1000,
                         P=1000, epochs=10, batch_size=512,
                         hybrid=HybridConfig(patience=3)),
    "helmholtz1d": dict(dims=1, mean=2.5, stddev=0.3, M=100_000, N=1000,
                        P=1000, epochs=20, batch_size=512,
                        hybrid=HybridConfig(patience=25)),
    "external": dict(),
}


def _apply(cfg_kwargs: dict, attr: str, value) -> None:
    if "." in attr:
        group, name = attr.split(".")
        cfg_kwargs.setdefault(group, {})[name] = value
    else:
        cfg_kwargs[attr] = value


def parse_config(path) -> ExperimentConfig:
    """Parse a line-oriented `key = value` config with [section] headers."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path) as f:
        lines = f.readlines()

    section = None
    raw: dict = {}
    for lineno, line in enumerate(lines, start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if stripped.startswith("[") and stripped.endswith("]"):
            section = stripped[1:-1].strip()
            if section not in ("experiment", "surrogate", "training", "hybrid", "seeds"):
                raise ConfigError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected `key = value`, got {stripped!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside any [section]")
        key, _, value = stripped.partition("=")
        key, value = key.strip(), value.strip()
        if (section, key) not in _SCHEMA:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        attr, conv = _SCHEMA[(section, key)]
        try:
            converted = conv(value)
        except ValueError:
            raise ConfigError(
                f"line {lineno}: value {value!r} for {key!r} is not a valid "
                f"{conv.__name__}"
            ) from None
        raw[(section, key)] = converted

    experiment = raw.get(("experiment", "name"), "ode")
    kwargs: dict = dict(_EXPERIMENT_DEFAULTS.get(experiment, {}))
    kwargs["experiment"] = experiment
    hybrid_kwargs: dict = {}
    seeds_kwargs: dict = {}
    if "hybrid" in kwargs:
        base = kwargs.pop("hybrid")
        hybrid_kwargs = dict(delta_m=base.delta_m, epsilon=base.epsilon,
                             patience=base.patience, max_pf_calls=base.max_pf_calls)
    for (section, key), value in raw.items():
        attr, _ = _SCHEMA[(section, key)]
        if attr.startswith("hybrid."):
            hybrid_kwargs[attr.split(".")[1]] = value
        elif attr.startswith("seeds."):
            seeds_kwargs[attr.split(".")[1]] = value
        elif attr != "experiment" or key == "name":
            kwargs[attr] = value
    try:
        if hybrid_kwargs:
            kwargs["hybrid"] = HybridConfig(**hybrid_kwargs)
        if seeds_kwargs:
            kwargs["seeds"] = Seeds(**seeds_kwargs)
        cfg = ExperimentConfig(**kwargs)
        cfg.validate()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return cfg


def emit_config(cfg: ExperimentConfig) -> str:
    """Config text that reparses to an equal config."""
    lines = ["[experiment]",
             f"name = {cfg.experiment}",
             f"dims = {cfg.dims}",
             f"mean = {cfg.mean:.17g}",
             f"stddev = {cfg.stddev:.17g}",
             f"M = {cfg.M}",
             f"beta = {cfg.beta:.17g}",
             f"grid_points = {cfg.grid_points}",
             f"probe = {cfg.probe:.17g}",
             f"threshold = {cfg.threshold:.17g}"]
    if cfg.command:
        lines.append(f"command = {cfg.command}")
    lines += ["", "[surrogate]",
              f"kind = {cfg.surrogate_kind}",
              f"N = {cfg.N}", f"P = {cfg.P}",
              f"k = {cfg.k:.17g}", f"sensors = {cfg.sensors}",
              f"latent = {cfg.latent}",
              "", "[training]",
              f"epochs = {cfg.epochs}",
              f"batch_size = {cfg.batch_size}",
              f"learning_rate = {cfg.learning_rate:.17g}",
              "", "[hybrid]",
              f"delta_M = {cfg.hybrid.delta_m}",
              f"epsilon = {cfg.hybrid.epsilon:.17g}",
              f"patience = {cfg.hybrid.patience}"]
    if cfg.hybrid.max_pf_calls is not None:
        lines.append(f"max_pf_calls = {cfg.hybrid.max_pf_calls}")
    lines += ["", "[seeds]",
              f"sampling = {cfg.seeds.sampling}",
              f"init = {cfg.seeds.init}",
              f"training = {cfg.seeds.training}"]
    return "\n".join(lines) + "\n"


def build_model(cfg: ExperimentConfig):
    if cfg.experiment == "ode":
        return models_mod.OdeDecayModel()
    if cfg.experiment == "multivariate":
        return models_mod.MultivariateLinearModel(n=cfg.dims, beta=cfg.beta)
    if cfg.experiment == "helmholtz1d":
        return models_mod.Helmholtz1dModel(grid_points=cfg.grid_points,
                                           probe=cfg.probe,
                                           threshold=cfg.threshold)
    if cfg.experiment == "external":
        return models_mod.external_model(shlex.split(cfg.command), dims=cfg.dims)
    raise ConfigError(f"unknown experiment {cfg.experiment!r}")


def build_spec(cfg: ExperimentConfig) -> RandomVectorSpec:
    return RandomVectorSpec.iid(cfg.dims, cfg.mean, cfg.stddev)


def reference_pf(cfg: ExperimentConfig):
    """(reference value or None, provenance string)."""
    if cfg.experiment == "ode":
        model = models_mod.OdeDecayModel()
        return models_mod.analytic_failure_probability(model, build_spec(cfg)), "analytic"
    if cfg.experiment == "multivariate":
        model = models_mod.MultivariateLinearModel(n=cfg.dims, beta=cfg.beta)
        return models_mod.analytic_failure_probability(model), "analytic"
    if cfg.experiment == "helmholtz1d":
        return HELMHOLTZ1D_REFERENCE_PF, "frozen MCS (M=1e6, grid 2049)"
    return None, "none"


def operator_parameter_count(cfg: ExperimentConfig, hidden=(40, 40)) -> int:
    """Parameter count the operator surrogate would have under this config."""
    def mlp_count(widths):
        return sum(widths[i] * widths[i + 1] + widths[i + 1]
                   for i in range(len(widths) - 1))

    branch = [cfg.sensors, *hidden, cfg.latent]
    trunk = [cfg.dims, *hidden, cfg.latent]
    return mlp_count(branch) + mlp_count(trunk) + 1


def _mcs_seed(cfg: ExperimentConfig) -> int:
    # separate stream family from the training-sample seed
    return stochastic.stream_seed(cfg.seeds.sampling, 1_000_003)


def run_experiment(cfg: ExperimentConfig, out_dir=None, method: str | None = None):
    """Execute one configured run; returns (RunReport, HybridResult or None).

    Writes report.csv, trace.csv (hybrid runs), and a surrogate checkpoint
    into out_dir when given.
    """
    cfg.validate()
    kind = method if method is not None else cfg.surrogate_kind
    if method is not None and method == "mcs":
        kind = "none"
    if kind not in SURROGATE_KINDS:
        raise ConfigError(f"unknown method {kind!r}")

    model = build_model(cfg)
    spec = build_spec(cfg)
    reference, provenance = reference_pf(cfg)

    t0 = time.perf_counter()
    result = None
    checkpoint_writer = None

    try:
        if kind == "none":
            samples = stochastic.sample_random_vector(spec, cfg.M, _mcs_seed(cfg))
            p_f = hybrid_mod.mcs_estimate(model, samples)
            pf_train, pf_eval = 0, cfg.M
            label = "mcs"
        else:
            params = surrogate_mod.InputFunctionParams(
                k=cfg.k, sigma_bar=spec.sigma_bar, sensor_count=cfg.sensors)
            if kind == "noh":
                data = surrogate_mod.generate_operator_dataset(
                    model, spec, cfg.N, cfg.P, params, cfg.seeds.sampling)
                surr, _ = surrogate_mod.train_operator_surrogate(
                    data, params, latent_width=cfg.latent, epochs=cfg.epochs,
                    batch_size=min(cfg.batch_size, cfg.N * cfg.P),
                    lr=cfg.learning_rate, init_seed=cfg.seeds.init,
                    train_seed=cfg.seeds.training)
                checkpoint_writer = lambda path: surrogate_mod.save_operator_checkpoint(surr, path)
            else:
                target = operator_parameter_count(cfg)
                surr, _ = surrogate_mod.train_neural_surrogate(
                    model, spec, cfg.N, epochs=cfg.epochs,
                    batch_size=min(cfg.batch_size, cfg.N),
                    lr=cfg.learning_rate, sample_seed=cfg.seeds.sampling,
                    init_seed=cfg.seeds.init, train_seed=cfg.seeds.training,
                    match_param_count=target)
                actual = surr.parameter_count()
                if abs(actual - target) > 0.10 * target:
                    raise RuntimeError(
                        f"NH parameter count {actual} not within 10% of NOH {target}")
                from . import neural as neural_mod
                checkpoint_writer = lambda path: neural_mod.save_checkpoint(surr.net, path)
            pf_train = model.call_count
            samples = stochastic.sample_random_vector(spec, cfg.M, _mcs_seed(cfg))
            result = hybrid_mod.hybrid_iterate(surr, model, samples, cfg.hybrid)
            p_f = result.p_f
            pf_eval = result.pf_calls_evaluating
            label = kind
    finally:
        if hasattr(model, "close"):
            model.close()
    wall = time.perf_counter() - t0

    total = pf_train + pf_eval
    if total != model.call_count:
        raise RuntimeError(
            f"PF-call ledger mismatch: reported {total}, counter {model.call_count}")

    report = RunReport(method=label, p_f=p_f, pf_calls_training=pf_train,
                       pf_calls_evaluating=pf_eval, reference=reference,
                       reference_provenance=provenance, wall_time=wall,
                       model_pf_calls=model.call_count)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        emit_report([report], os.path.join(out_dir, "report.csv"))
        if result is not None:
            _atomic_write(os.path.join(out_dir, "trace.csv"),
                          _trace_text(result.trace))
        if checkpoint_writer is not None:
            tmp = os.path.join(out_dir, ".surrogate.ckpt.tmp")
            checkpoint_writer(tmp)
            os.replace(tmp, os.path.join(out_dir, "surrogate.ckpt"))
        _atomic_write(os.path.join(out_dir, "config.cfg"), emit_config(cfg))
    return report, result


def _trace_text(trace) -> str:
    lines = ["k,delta_P,p_f_k,pf_calls_cum"]
    for rec in trace:
        lines.append(f"{rec.k},{rec.delta_p:.17g},{rec.p_f:.17g},{rec.pf_calls_cum}")
    return "\n".join(lines) + "\n"


def _atomic_write(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def report_csv_text(reports) -> str:
    lines = ["method,p_f,pf_calls_training,pf_calls_evaluating,reference,rel_error_percent"]
    for r in reports:
        ref = "" if r.reference is None else f"{r.reference:.17g}"
        if r.reference is None or r.reference <= 0:
            err = ""
        else:
            err = f"{100.0 * abs(r.p_f - r.reference) / r.reference:.17g}"
        lines.append(f"{r.method},{r.p_f:.17g},{r.pf_calls_training},"
                     f"{r.pf_calls_evaluating},{ref},{err}")
    return "\n".join(lines) + "\n"


def emit_report(reports, path) -> None:
    if not reports:
        raise ValueError("report list must be nonempty")
    _atomic_write(path, report_csv_text(reports))
