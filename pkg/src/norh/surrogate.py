"""Surrogate families for the limit state function.

Two constructions share one training engine: a plain feedforward surrogate
trained on (z, g(z)) pairs, and an operator surrogate whose branch network
sees the sample's affine input function at fixed sensors while the trunk
network sees the query point itself; the prediction is their inner product
plus a scalar bias.
"""

from dataclasses import dataclass

import numpy as np

from . import neural, stochastic
from .models import LimitStateModel
from .neural import AdamState, Dataset, MlpNetwork
from .stochastic import RandomVectorSpec, SampleMatrix

OPERATOR_CHECKPOINT_HEADER = "norh-don v1"

_PREDICT_CHUNK = 1 << 16


@dataclass(frozen=True)
class InputFunctionParams:
    """Affine input-function family u(x) = z_bar - k*sigma_bar + 2*k*sigma_bar*x
    discretized at m uniform sensors on [0, 1]."""

    k: float
    sigma_bar: float
    sensor_count: int

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("k must be non-negative")
        if self.sensor_count < 2:
            raise ValueError("need at least two sensors")

    @property
    def sensors(self) -> np.ndarray:
        m = self.sensor_count
        return np.arange(m) / (m - 1)


def build_input_function(z, params: InputFunctionParams):
    """Mean statistic z_bar and the sensor values of its input function."""
    z = np.asarray(z, dtype=np.float64).reshape(-1)
    z_bar = float(z.mean())
    ks = params.k * params.sigma_bar
    return z_bar, z_bar - ks + 2.0 * ks * params.sensors


def _input_functions_batch(Z: np.ndarray, params: InputFunctionParams) -> np.ndarray:
    z_bar = Z.mean(axis=1, keepdims=True)
    ks = params.k * params.sigma_bar
    return z_bar - ks + 2.0 * ks * params.sensors[None, :]


@dataclass
class OperatorDataset:
    branch_inputs: np.ndarray   # N x m
    trunk_inputs: np.ndarray    # N x P x n_z
    targets: np.ndarray         # N x P

    def __post_init__(self):
        N, m = self.branch_inputs.shape
        if self.trunk_inputs.shape[0] != N or self.targets.shape != self.trunk_inputs.shape[:2]:
            raise ValueError("inconsistent operator dataset dimensions")
        for arr in (self.branch_inputs, self.trunk_inputs, self.targets):
            if not np.isfinite(arr).all():
                raise ValueError("operator dataset contains non-finite entries")

    @property
    def n_functions(self) -> int:
        return self.branch_inputs.shape[0]

    @property
    def n_observations(self) -> int:
        return self.trunk_inputs.shape[1]


def generate_operator_dataset(model: LimitStateModel, spec: RandomVectorSpec,
                              N: int, P: int, params: InputFunctionParams,
                              seed: int, shared_observations: bool = False) -> OperatorDataset:
    """Sample N points, evaluate g once each (exactly N PF calls), and draw
    the P observation points per function from the sampled pool so their
    targets reuse the cached g values."""
    if N < 1 or P < 1:
        raise ValueError("N and P must be >= 1")
    samples = stochastic.sample_random_vector(spec, N, seed)
    g_values = model.evaluate_batch(samples)

    branch = _input_functions_batch(samples.data, params)

    # observation indices: one extra PRNG stream past the sampling columns
    n_idx = P if shared_observations else N * P
    u = stochastic.uniform(n_idx, seed, stream=spec.dims)
    idx = np.minimum((u * N).astype(np.int64), N - 1)
    if shared_observations:
        idx = np.tile(idx, N)
    idx = idx.reshape(N, P)

    trunk = samples.data[idx]          # N x P x n_z
    targets = g_values[idx]            # N x P
    return OperatorDataset(branch, trunk, targets)


@dataclass
class OperatorSurrogate:
    """Branch/trunk operator surrogate: prediction = <branch(u_z), trunk(z)> + b0."""

    branch: MlpNetwork
    trunk: MlpNetwork
    params: InputFunctionParams
    output_bias: float = 0.0

    def __post_init__(self):
        if self.branch.output_width != self.trunk.output_width:
            raise ValueError("branch and trunk output widths must match")
        if self.branch.input_width != self.params.sensor_count:
            raise ValueError("branch input width must equal the sensor count")

    @property
    def latent_width(self) -> int:
        return self.branch.output_width

    @property
    def dims(self) -> int:
        return self.trunk.input_width

    def parameter_count(self) -> int:
        return self.branch.parameter_count() + self.trunk.parameter_count() + 1

    def predict(self, z) -> float:
        z = np.asarray(z, dtype=np.float64).reshape(-1)
        if z.size != self.dims:
            raise ValueError(f"expected input of length {self.dims}, got {z.size}")
        _, u = build_input_function(z, self.params)
        b = neural.mlp_forward(self.branch, u)
        t = neural.mlp_forward(self.trunk, z)
        return float(b @ t + self.output_bias)

    def predict_batch(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        if Z.shape[1] != self.dims:
            raise ValueError(f"expected {self.dims} columns, got {Z.shape[1]}")
        out = np.empty(Z.shape[0])
        for start in range(0, Z.shape[0], _PREDICT_CHUNK):
            chunk = Z[start:start + _PREDICT_CHUNK]
            U = _input_functions_batch(chunk, self.params)
            B = neural.forward_batch(self.branch, U)
            T = neural.forward_batch(self.trunk, chunk)
            out[start:start + _PREDICT_CHUNK] = np.sum(B * T, axis=1) + self.output_bias
        return out

    def __call__(self, z) -> float:
        return self.predict(z)


@dataclass
class NeuralSurrogate:
    """Plain feedforward surrogate z -> g_hat(z)."""

    net: MlpNetwork

    @property
    def dims(self) -> int:
        return self.net.input_width

    def parameter_count(self) -> int:
        return self.net.parameter_count()

    def predict(self, z) -> float:
        return float(neural.mlp_forward(self.net, z)[0])

    def predict_batch(self, Z) -> np.ndarray:
        Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
        out = np.empty(Z.shape[0])
        for start in range(0, Z.shape[0], _PREDICT_CHUNK):
            out[start:start + _PREDICT_CHUNK] = neural.forward_batch(
                self.net, Z[start:start + _PREDICT_CHUNK])[:, 0]
        return out

    def __call__(self, z) -> float:
        return self.predict(z)


def operator_loss(surrogate: OperatorSurrogate, data: OperatorDataset) -> float:
    """Training objective over the whole dataset: mean squared residual over
    all N*P (input function, observation) pairs."""
    N, P = data.targets.shape
    B_in = np.repeat(data.branch_inputs, P, axis=0)
    T_in = data.trunk_inputs.reshape(N * P, -1)
    y = data.targets.reshape(-1)
    B = neural.forward_batch(surrogate.branch, B_in)
    T = neural.forward_batch(surrogate.trunk, T_in)
    pred = np.sum(B * T, axis=1) + surrogate.output_bias
    return float(np.mean((pred - y) ** 2))


def train_operator_surrogate(data: OperatorDataset, params: InputFunctionParams,
                             latent_width: int = 40, hidden_widths=(40, 40),
                             epochs: int = 50, batch_size: int = 256,
                             lr: float = 0.001, init_seed: int = 0,
                             train_seed: int = 0):
    """Joint Adam training of branch, trunk, and output bias on the flattened
    (u, y, g(y)) triples.  Returns (surrogate, per-epoch loss history)."""
    N, P = data.targets.shape
    m = data.branch_inputs.shape[1]
    n_z = data.trunk_inputs.shape[2]
    rows = N * P
    if batch_size > rows:
        raise ValueError(f"batch_size {batch_size} exceeds flattened rows {rows}")

    branch = neural.init_network([m, *hidden_widths, latent_width], "tanh",
                                 seed=stochastic.stream_seed(init_seed, 1))
    trunk = neural.init_network([n_z, *hidden_widths, latent_width], "tanh",
                                seed=stochastic.stream_seed(init_seed, 2))
    surrogate = OperatorSurrogate(branch, trunk, params, output_bias=0.0)

    func_idx = np.repeat(np.arange(N), P)
    T_in = data.trunk_inputs.reshape(rows, n_z)
    y = data.targets.reshape(rows)

    b_state = AdamState.for_network(branch, learning_rate=lr)
    t_state = AdamState.for_network(trunk, learning_rate=lr)
    bias = 0.0
    bias_m = bias_v = 0.0

    history = []
    for epoch in range(epochs):
        order = neural.shuffled_indices(rows, train_seed, stream=epoch)
        loss_sum = 0.0
        for start in range(0, rows, batch_size):
            idx = order[start:start + batch_size]
            B_in = data.branch_inputs[func_idx[idx]]
            pre_b, acts_b = neural._forward_cache(branch, B_in)
            pre_t, acts_t = neural._forward_cache(trunk, T_in[idx])
            B, T = acts_b[-1], acts_t[-1]
            resid = np.sum(B * T, axis=1) + bias - y[idx]
            loss = float(np.mean(resid * resid))
            loss_sum += loss * idx.size

            d_pred = (2.0 / idx.size) * resid
            dB = d_pred[:, None] * T
            dT = d_pred[:, None] * B
            gW_b, gb_b, _ = neural.backward_from_output_grad(branch, pre_b, acts_b, dB)
            gW_t, gb_t, _ = neural.backward_from_output_grad(trunk, pre_t, acts_t, dT)
            g_bias = float(d_pred.sum())

            neural.adam_step(branch, b_state, (gW_b, gb_b))
            neural.adam_step(trunk, t_state, (gW_t, gb_t))
            t = b_state.step_count
            bias_m = 0.9 * bias_m + 0.1 * g_bias
            bias_v = 0.999 * bias_v + 0.001 * g_bias * g_bias
            m_hat = bias_m / (1.0 - 0.9**t)
            v_hat = bias_v / (1.0 - 0.999**t)
            bias -= lr * m_hat / (np.sqrt(v_hat) + 1e-8)
        history.append(loss_sum / rows)

    surrogate.output_bias = float(bias)
    return surrogate, history


def match_hidden_width(input_width: int, hidden_layers: int,
                       target_params: int) -> int:
    """Hidden width for a [input, w, ..., w, 1] net whose parameter count is
    closest to target_params."""
    def count(w: int) -> int:
        total = input_width * w + w
        total += (hidden_layers - 1) * (w * w + w)
        total += w + 1
        return total

    best_w, best_gap = 1, abs(count(1) - target_params)
    w = 2
    while True:
        gap = abs(count(w) - target_params)
        if gap < best_gap:
            best_w, best_gap = w, gap
        if count(w) > target_params and gap > best_gap:
            break
        w += 1
    return best_w


def train_neural_surrogate(model: LimitStateModel, spec: RandomVectorSpec,
                           N: int, epochs: int = 500, batch_size: int = 64,
                           lr: float = 0.001, sample_seed: int = 0,
                           init_seed: int = 0, train_seed: int = 0,
                           hidden_layers: int = 3,
                           match_param_count: int | None = None):
    """Sample N points (N PF calls), train a plain net on (z, g(z)).

    When match_param_count is given the hidden width is chosen so the total
    parameter count lands within 10% of it (comparability with the operator
    surrogate); otherwise a width of 40 is used.
    """
    if N < 1:
        raise ValueError("N must be >= 1")
    samples = stochastic.sample_random_vector(spec, N, sample_seed)
    g_values = model.evaluate_batch(samples)

    if match_param_count is None:
        width = 40
    else:
        width = match_hidden_width(spec.dims, hidden_layers, match_param_count)
    widths = [spec.dims] + [width] * hidden_layers + [1]
    net = neural.init_network(widths, "tanh", seed=init_seed)
    data = Dataset(samples.data, g_values.reshape(-1, 1))
    net, history = neural.train(net, data, epochs, min(batch_size, N), lr,
                                seed=train_seed)
    return NeuralSurrogate(net), history


def surrogate_mcs(surrogate, samples: SampleMatrix) -> float:
    """Fraction of samples the surrogate marks as failed; zero PF calls."""
    pred = surrogate.predict_batch(samples.data)
    return float(np.count_nonzero(pred < 0.0)) / samples.rows


def save_operator_checkpoint(surrogate: OperatorSurrogate, path) -> None:
    lines = [OPERATOR_CHECKPOINT_HEADER,
             f"p: {surrogate.latent_width}",
             f"k: {surrogate.params.k:.17g}",
             f"sigma_bar: {surrogate.params.sigma_bar:.17g}",
             f"m: {surrogate.params.sensor_count}",
             f"b0: {surrogate.output_bias:.17g}",
             "branch:"]
    lines += _mlp_lines(surrogate.branch)
    lines.append("trunk:")
    lines += _mlp_lines(surrogate.trunk)
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def _mlp_lines(net: MlpNetwork):
    lines = [neural.CHECKPOINT_HEADER,
             "widths: " + " ".join(str(w) for w in net.layer_widths),
             f"activation: {net.activation}"]
    for W, b in zip(net.weights, net.biases):
        for row in W:
            lines.append(" ".join(f"{v:.17g}" for v in row))
        lines.append(" ".join(f"{v:.17g}" for v in b))
    return lines


def load_operator_checkpoint(path) -> OperatorSurrogate:
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0] != OPERATOR_CHECKPOINT_HEADER:
        raise ValueError(f"not a {OPERATOR_CHECKPOINT_HEADER!r} checkpoint")
    header = dict(ln.split(": ", 1) for ln in lines[1:6])
    if lines[6] != "branch:":
        raise ValueError("missing branch section")
    trunk_at = lines.index("trunk:")
    branch = neural._parse_checkpoint_lines(lines[7:trunk_at])
    trunk = neural._parse_checkpoint_lines(lines[trunk_at + 1:])
    params = InputFunctionParams(k=float(header["k"]),
                                 sigma_bar=float(header["sigma_bar"]),
                                 sensor_count=int(header["m"]))
    return OperatorSurrogate(branch, trunk, params,
                             output_bias=float(header["b0"]))
