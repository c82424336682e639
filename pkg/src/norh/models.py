"""Limit-state models g(Z) with evaluation accounting.

Failure is g(z) < 0 everywhere; g(z) = 0 counts as non-failure.  Every
`evaluate` increments the model's call counter exactly once, with no
memoization, so the counter reports the number of simulations actually run.
"""

import math
import subprocess
import threading
from queue import Empty, Queue

import numpy as np

from .stochastic import RandomVectorSpec, SampleMatrix, gaussian_cdf


class ModelEvaluationError(RuntimeError):
    """An external or numerical model failed to produce a usable value."""

    def __init__(self, message: str, raw_output: str | None = None):
        super().__init__(message)
        self.raw_output = raw_output


class SingularOperatorError(ModelEvaluationError):
    """Discrete operator is (near-)singular for the requested parameters."""


class UnsupportedOracleError(ValueError):
    """No analytic failure-probability formula exists for this model."""


class LimitStateModel:
    """Base contract: deterministic g(z) plus an exact PF-call counter."""

    dims: int

    def __init__(self, dims: int):
        self.dims = dims
        self._calls = 0
        self._lock = threading.Lock()

    @property
    def call_count(self) -> int:
        return self._calls

    def reset_calls(self) -> None:
        with self._lock:
            self._calls = 0

    def _count(self, n: int = 1) -> None:
        with self._lock:
            self._calls += n

    def _g(self, z: np.ndarray) -> float:
        raise NotImplementedError

    def evaluate(self, z) -> float:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != self.dims:
            raise ValueError(f"expected input of length {self.dims}, got {z.size}")
        self._count()
        return float(self._g(z))

    def evaluate_batch(self, samples: SampleMatrix) -> np.ndarray:
        """g on every row; counts one PF call per row."""
        data = samples.data
        if data.shape[1] != self.dims:
            raise ValueError(f"expected {self.dims} columns, got {data.shape[1]}")
        out = np.empty(data.shape[0])
        for i in range(data.shape[0]):
            self._count()
            out[i] = self._g(data[i])
        return out


def ode_exact_solution(z: float, t: float, s0: float) -> float:
    """State of ds/dt = -z*s at time t from s(0) = s0."""
    return s0 * math.exp(-z * t)


class OdeDecayModel(LimitStateModel):
    """Exponential decay: g(z) = s0*exp(-z*t) - sd, failure when the state
    has not decayed below the threshold sd by time t."""

    def __init__(self, s0: float = 1.0, t: float = 1.0, sd: float = 0.5):
        if t <= 0 or s0 <= 0:
            raise ValueError("require t > 0 and s0 > 0")
        super().__init__(dims=1)
        self.s0 = s0
        self.t = t
        self.sd = sd

    def _g(self, z: np.ndarray) -> float:
        return ode_exact_solution(z[0], self.t, self.s0) - self.sd

    def evaluate_batch(self, samples: SampleMatrix) -> np.ndarray:
        data = samples.data
        if data.shape[1] != self.dims:
            raise ValueError(f"expected {self.dims} columns, got {data.shape[1]}")
        self._count(data.shape[0])
        return self.s0 * np.exp(-data[:, 0] * self.t) - self.sd


class MultivariateLinearModel(LimitStateModel):
    """High-dimensional linear benchmark g(z) = beta*sqrt(n) - sum(z)."""

    def __init__(self, n: int = 50, beta: float = 3.5):
        if n < 1:
            raise ValueError("require n >= 1")
        super().__init__(dims=n)
        self.n = n
        self.beta = beta

    def _g(self, z: np.ndarray) -> float:
        return self.beta * math.sqrt(self.n) - float(z.sum())

    def evaluate_batch(self, samples: SampleMatrix) -> np.ndarray:
        data = samples.data
        if data.shape[1] != self.dims:
            raise ValueError(f"expected {self.dims} columns, got {data.shape[1]}")
        self._count(data.shape[0])
        return self.beta * math.sqrt(self.n) - data.sum(axis=1)


def _check_resonance(kappa: float) -> None:
    k2 = kappa * kappa
    j = max(1, round(math.sqrt(abs(k2)) / math.pi))
    for jj in (j - 1, j, j + 1):
        if jj >= 1 and abs(k2 - (jj * math.pi) ** 2) < 1e-6:
            raise SingularOperatorError(
                f"kappa^2 = {k2} within 1e-6 of eigenvalue ({jj}*pi)^2"
            )


def helmholtz_solve_1d(kappa: float, grid_points: int, forcing=None) -> np.ndarray:
    """Solve -u'' - kappa^2 u = f on (0,1), u(0)=u(1)=0, by second-order
    central differences and a tridiagonal (Thomas) solve.

    `forcing` is a callable f(x) or None for the constant f = 1.  Returns the
    full nodal vector including the zero boundary values.
    """
    if grid_points < 3:
        raise ValueError("grid_points must be >= 3")
    _check_resonance(kappa)
    n = grid_points - 2
    h = 1.0 / (grid_points - 1)
    x = np.linspace(0.0, 1.0, grid_points)
    if forcing is None:
        rhs = np.ones(n)
    else:
        rhs = np.asarray([forcing(xi) for xi in x[1:-1]], dtype=np.float64)

    diag = 2.0 / h**2 - kappa * kappa
    off = -1.0 / h**2

    # Thomas forward sweep with a pivot guard
    c_prime = np.empty(n)
    d_prime = np.empty(n)
    pivot = diag
    if abs(pivot) < 1e-12:
        raise SingularOperatorError(f"zero pivot at row 0 (|{pivot}| < 1e-12)")
    c_prime[0] = off / pivot
    d_prime[0] = rhs[0] / pivot
    for i in range(1, n):
        pivot = diag - off * c_prime[i - 1]
        if abs(pivot) < 1e-12:
            raise SingularOperatorError(f"zero pivot at row {i} (|{pivot}| < 1e-12)")
        c_prime[i] = off / pivot
        d_prime[i] = (rhs[i] - off * d_prime[i - 1]) / pivot

    u = np.zeros(grid_points)
    u[n] = d_prime[n - 1]
    for i in range(n - 2, -1, -1):
        u[i + 1] = d_prime[i] - c_prime[i] * u[i + 2]
    return u


def helmholtz_exact_constant_forcing(kappa: float, x: float) -> float:
    """Closed-form solution of -u'' - kappa^2 u = 1, u(0)=u(1)=0."""
    if kappa == 0.0:
        return 0.5 * x * (1.0 - x)
    k2 = kappa * kappa
    return (math.cos(kappa * (x - 0.5)) / math.cos(kappa / 2.0) - 1.0) / k2


def helmholtz_discrete_probe(kappa, grid_points: int):
    """Midpoint value of the discrete constant-forcing solution in closed
    form (the constant-coefficient recurrence solved exactly).  Vectorized
    over `kappa`; used for high-volume reference runs and solver checks."""
    kappa = np.asarray(kappa, dtype=np.float64)
    if (grid_points - 1) % 2 != 0:
        raise ValueError("grid_points must be odd so the midpoint is a node")
    h = 1.0 / (grid_points - 1)
    c = (grid_points - 1) // 2
    k2 = kappa * kappa
    arg = 1.0 - k2 * h * h / 2.0
    # effective discrete wavenumber; arg < -1 cannot occur for kappa << 2/h
    theta = np.arccos(np.clip(arg, -1.0, 1.0))
    return (1.0 / np.cos(theta * c) - 1.0) / k2


class Helmholtz1dModel(LimitStateModel):
    """1-D Helmholtz stand-in: kappa = z[0], g = threshold - u_h(probe).

    Failure (g < 0) means the probed response exceeds the threshold.  The
    default threshold 6.0 is calibrated for kappa ~ N(2.5, 0.3^2) so the
    reference failure probability lands in [1e-3, 1e-2] (see bench docs).
    """

    def __init__(self, grid_points: int = 257, probe: float = 0.5,
                 threshold: float = 6.0, source: float = 1.0):
        if grid_points < 3:
            raise ValueError("grid_points must be >= 3")
        if grid_points % 2 == 0:
            raise ValueError("grid_points must be odd")
        if not 0.0 < probe < 1.0:
            raise ValueError("probe must be strictly interior")
        node = probe * (grid_points - 1)
        if abs(node - round(node)) > 1e-9:
            raise ValueError(f"probe {probe} does not sit on a grid node")
        super().__init__(dims=1)
        self.grid_points = grid_points
        self.probe = probe
        self.threshold = threshold
        self.source = source
        self._probe_index = int(round(node))

    def _g(self, z: np.ndarray) -> float:
        kappa = z[0]
        if self.source == 1.0:
            u = helmholtz_solve_1d(kappa, self.grid_points)
        else:
            u = helmholtz_solve_1d(kappa, self.grid_points, forcing=lambda _x: self.source)
        return self.threshold - u[self._probe_index]


class ExternalProcessModel(LimitStateModel):
    """Black-box model spoken to over a line protocol.

    Per evaluation the parent writes n_z whitespace-separated reals plus a
    newline to the child's stdin and reads back one real plus a newline.  The
    child lives for the lifetime of the model and is terminated on close().
    """

    def __init__(self, command, dims: int, timeout: float = 30.0):
        super().__init__(dims=dims)
        self.timeout = timeout
        self._proc = subprocess.Popen(
            command, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL, text=True, bufsize=1,
        )
        self._queue: Queue = Queue()
        self._reader = threading.Thread(target=self._drain, daemon=True)
        self._reader.start()

    def _drain(self):
        for line in self._proc.stdout:
            self._queue.put(line)

    def _g(self, z: np.ndarray) -> float:
        if self._proc.poll() is not None:
            raise ModelEvaluationError(
                f"child exited with code {self._proc.returncode} before evaluation"
            )
        line = " ".join(f"{v:.17g}" for v in z) + "\n"
        try:
            self._proc.stdin.write(line)
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError) as exc:
            raise ModelEvaluationError(f"failed to write to child: {exc}") from exc
        try:
            reply = self._queue.get(timeout=self.timeout)
        except Empty:
            raise ModelEvaluationError(
                f"child produced no output within {self.timeout} s"
            ) from None
        try:
            value = float(reply)
        except ValueError:
            raise ModelEvaluationError(
                f"child output is not a real number: {reply!r}", raw_output=reply
            ) from None
        if not math.isfinite(value):
            raise ModelEvaluationError(
                f"child output is not finite: {reply!r}", raw_output=reply
            )
        return value

    def close(self) -> None:
        if self._proc.poll() is None:
            try:
                self._proc.stdin.close()
            except OSError:
                pass
            self._proc.terminate()
            try:
                self._proc.wait(timeout=5)
            except subprocess.TimeoutExpired:
                self._proc.kill()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def external_model(command, dims: int, timeout: float = 30.0) -> ExternalProcessModel:
    """Wrap an executable speaking the line protocol as a LimitStateModel."""
    return ExternalProcessModel(command, dims, timeout=timeout)


def analytic_failure_probability(model: LimitStateModel,
                                 spec: RandomVectorSpec | None = None) -> float:
    """Closed-form P_f where one exists.

    OdeDecayModel needs the (Gaussian) input spec; MultivariateLinearModel
    assumes standard normal components.
    """
    if isinstance(model, OdeDecayModel):
        if spec is None or spec.dims != 1:
            raise UnsupportedOracleError("ODE oracle needs a 1-dimensional input spec")
        mu, sigma = spec.means[0], spec.stddevs[0]
        if sigma <= 0:
            raise UnsupportedOracleError("ODE oracle needs sigma > 0")
        # failure g < 0 <=> z > ln(s0/sd)/t
        z_crit = math.log(model.s0 / model.sd) / model.t
        return 1.0 - gaussian_cdf((z_crit - mu) / sigma)
    if isinstance(model, MultivariateLinearModel):
        if spec is not None and not (
            np.allclose(spec.means, 0.0) and np.allclose(spec.stddevs, 1.0)
        ):
            raise UnsupportedOracleError(
                "multivariate oracle assumes standard normal components"
            )
        return 1.0 - gaussian_cdf(model.beta)
    raise UnsupportedOracleError(f"no analytic oracle for {type(model).__name__}")
