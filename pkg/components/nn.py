# components/nn.py

"""
Dense feedforward networks in numpy: affine layers with logistic sigmoid
between them and the identity on the output layer, hand-written reverse
mode gradients and an Adam optimizer.

Layer n maps a row batch a -> a @ weights[n] + biases[n], so weights[n]
has shape (fan_in, fan_out).
"""

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import expit

from .constants import ADAM_BETA1, ADAM_BETA2, ADAM_EPSILON, DEFAULT_LEARNING_RATE

NETWORK_NAMES = ("u", "z", "ztilde")


@dataclass
class NetworkParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dims(self) -> tuple[int, ...]:
        return (self.weights[0].shape[0],) + tuple(w.shape[1] for w in self.weights)

    @property
    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def arrays(self) -> list[np.ndarray]:
        return [*self.weights, *self.biases]

    def copy(self) -> "NetworkParams":
        return NetworkParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def parameter_count(d0: int, d1: int, m: int, M: int) -> int:
    """Number of parameters of a network with M affine layers and hidden width m."""
    if M == 1:
        return (d0 + 1) * d1
    return (d0 + 1) * m + (m + 1) * m * (M - 2) + (m + 1) * d1


def hidden_width(d_in: int, d_out: int = 1) -> int:
    """Half of the input plus output neurons, rounded up."""
    return math.ceil((d_in + d_out) / 2)


def init_network(dims: Sequence[int], seed) -> NetworkParams:
    """Glorot-uniform weights, zero biases."""
    dims = [int(d) for d in dims]
    if len(dims) < 2 or any(d < 1 for d in dims):
        raise ValueError(f"network dims must be positive and at least (d_in, d_out), got {dims}")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return NetworkParams(weights, biases)


def _check_input(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    inputs = np.asarray(inputs, dtype=float)
    if inputs.ndim != 2 or inputs.shape[1] != params.weights[0].shape[0]:
        raise ValueError(
            f"input batch must have shape (J, {params.weights[0].shape[0]}), got {inputs.shape}"
        )
    return inputs


def _forward_trace(params: NetworkParams, inputs: np.ndarray) -> list[np.ndarray]:
    activations = [inputs]
    a = inputs
    last = len(params.weights) - 1
    for n, (w, b) in enumerate(zip(params.weights, params.biases)):
        a = a @ w + b
        if n < last:
            a = expit(a)
        activations.append(a)
    return activations


def forward(params: NetworkParams, inputs: np.ndarray) -> np.ndarray:
    inputs = _check_input(params, inputs)
    return _forward_trace(params, inputs)[-1]


def backward(params: NetworkParams, inputs: np.ndarray, grad_output: np.ndarray) -> NetworkParams:
    """
    Gradient of mean_j <grad_output[j], forward(inputs)[j]> with respect to
    every weight and bias.
    """
    inputs = _check_input(params, inputs)
    grad_output = np.asarray(grad_output, dtype=float)
    d_out = params.weights[-1].shape[1]
    if grad_output.shape != (inputs.shape[0], d_out):
        raise ValueError(f"output gradient must have shape {(inputs.shape[0], d_out)}, got {grad_output.shape}")

    activations = _forward_trace(params, inputs)
    delta = grad_output / inputs.shape[0]
    n_layers = len(params.weights)
    grad_w = [None] * n_layers
    grad_b = [None] * n_layers
    for n in range(n_layers - 1, -1, -1):
        a_prev = activations[n]
        grad_w[n] = a_prev.T @ delta
        grad_b[n] = delta.sum(axis=0)
        if n > 0:
            delta = (delta @ params.weights[n].T) * a_prev * (1.0 - a_prev)
    return NetworkParams(grad_w, grad_b)


def gradient_check(params: NetworkParams, inputs: np.ndarray, grad_output: np.ndarray, h: float = 1e-5) -> float:
    """
    Relative error ||fd - bp|| / (||fd|| + ||bp||) between central finite
    differences of mean_j <grad_output[j], forward(inputs)[j]> and `backward`.
    """
    grad_output = np.asarray(grad_output, dtype=float)

    def objective():
        return float(np.sum(grad_output * forward(params, inputs)) / len(inputs))

    analytic = np.concatenate([g.ravel() for g in backward(params, inputs, grad_output).arrays()])
    numeric = []
    for p in params.arrays():
        flat = p.reshape(-1)
        for k in range(flat.size):
            saved = flat[k]
            flat[k] = saved + h
            up = objective()
            flat[k] = saved - h
            down = objective()
            flat[k] = saved
            numeric.append((up - down) / (2 * h))
    numeric = np.array(numeric)
    scale = np.linalg.norm(numeric) + np.linalg.norm(analytic)
    return float(np.linalg.norm(numeric - analytic) / scale) if scale > 0 else 0.0


@dataclass
class AdamState:
    first: list[np.ndarray]
    second: list[np.ndarray]
    step: int = 0
    learning_rate: float = DEFAULT_LEARNING_RATE
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPSILON


def adam_init(params: NetworkParams, learning_rate: float = DEFAULT_LEARNING_RATE,
              beta1: float = ADAM_BETA1, beta2: float = ADAM_BETA2, eps: float = ADAM_EPSILON) -> AdamState:
    zeros = [np.zeros_like(p) for p in params.arrays()]
    return AdamState(first=zeros, second=[z.copy() for z in zeros], step=0,
                     learning_rate=learning_rate, beta1=beta1, beta2=beta2, eps=eps)


def adam_step(params: NetworkParams, grads: NetworkParams, state: AdamState) -> tuple[NetworkParams, AdamState]:
    """One bias-corrected Adam update, applied in place; returns (params, state)."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    correction1 = 1.0 - b1 ** state.step
    correction2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params.arrays(), grads.arrays(), state.first, state.second):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.learning_rate * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
    return params, state


@dataclass
class StepNetworks:
    """The (U_i, Z_i, Ztilde_i) triple for backward step i; inputs have width 1 + 2i."""
    step: int
    u: NetworkParams
    z: NetworkParams
    ztilde: NetworkParams
    optimizers: dict[str, AdamState] = field(default_factory=dict, repr=False)

    @property
    def input_dim(self) -> int:
        return 1 + 2 * self.step

    def networks(self) -> dict[str, NetworkParams]:
        return {"u": self.u, "z": self.z, "ztilde": self.ztilde}


def build_step_networks(step: int, seed: Sequence[int], hidden_layers: int = 1,
                        learning_rate: float = DEFAULT_LEARNING_RATE) -> StepNetworks:
    d_in = 1 + 2 * step
    dims = [d_in] + [hidden_width(d_in)] * hidden_layers + [1]
    seed = list(seed)
    nets = {name: init_network(dims, seed + [k]) for k, name in enumerate(NETWORK_NAMES)}
    optimizers = {name: adam_init(net, learning_rate) for name, net in nets.items()}
    return StepNetworks(step=step, optimizers=optimizers, **nets)


def save_checkpoint(networks: Sequence[StepNetworks], path) -> pd.DataFrame:
    """
    CSV layout: step, network (u|z|ztilde), layer, kind (weight|bias),
    row, col, value. Bias rows use row = 0.
    """
    records = []
    for nets in networks:
        for name, net in nets.networks().items():
            for layer, (w, b) in enumerate(zip(net.weights, net.biases)):
                rows, cols = np.indices(w.shape)
                for r, c, val in zip(rows.ravel(), cols.ravel(), w.ravel()):
                    records.append((nets.step, name, layer, "weight", r, c, val))
                for c, val in enumerate(b):
                    records.append((nets.step, name, layer, "bias", 0, c, val))
    df = pd.DataFrame.from_records(records, columns=["step", "network", "layer", "kind", "row", "col", "value"])
    df.to_csv(path, index=False, float_format="%.17g")
    return df


def load_checkpoint(path) -> dict[int, StepNetworks]:
    df = pd.read_csv(path, float_precision="round_trip")
    loaded = {}
    for step, step_df in df.groupby("step"):
        nets = {}
        for name in NETWORK_NAMES:
            net_df = step_df[step_df["network"] == name]
            weights, biases = [], []
            for _, layer_df in net_df.groupby("layer"):
                w_df = layer_df[layer_df["kind"] == "weight"]
                b_df = layer_df[layer_df["kind"] == "bias"]
                w = np.zeros((w_df["row"].max() + 1, w_df["col"].max() + 1))
                w[w_df["row"].to_numpy(), w_df["col"].to_numpy()] = w_df["value"].to_numpy()
                b = np.zeros(b_df["col"].max() + 1)
                b[b_df["col"].to_numpy()] = b_df["value"].to_numpy()
                weights.append(w)
                biases.append(b)
            nets[name] = NetworkParams(weights, biases)
        loaded[int(step)] = StepNetworks(step=int(step), **nets)
    return loaded
