"""Dense feed-forward networks with exact reverse-mode gradients.

Gradients are available with respect to both the parameters and the
input, since the latent sampler needs d(output)/d(input) to move the
imputed confounders.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import kernels
from .errors import ConfigurationError, DimensionError, NumericError


class Activation(str, enum.Enum):
    TANH = "tanh"
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


HIDDEN_ACTIVATIONS = (Activation.TANH, Activation.RELU, Activation.SIGMOID)
OUTPUT_ACTIVATIONS = (Activation.IDENTITY, Activation.SIGMOID)


@dataclass(frozen=True)
class MlpSpec:
    """Architecture of one module.

    ``layer_widths`` lists the input width first and the output width last.
    ReLU is accepted as a hidden activation but is not smooth, so the latent
    gradient it produces is piecewise constant.
    """

    layer_widths: tuple[int, ...]
    hidden_activation: Activation = Activation.TANH
    output_activation: Activation = Activation.IDENTITY

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        object.__setattr__(self, "hidden_activation", Activation(self.hidden_activation))
        object.__setattr__(self, "output_activation", Activation(self.output_activation))
        if len(widths) < 2:
            raise ConfigurationError(f"need at least 2 layer widths, got {widths}")
        if any(w < 1 for w in widths):
            raise ConfigurationError(f"layer widths must be >= 1, got {widths}")
        if self.hidden_activation not in HIDDEN_ACTIVATIONS:
            raise ConfigurationError(f"bad hidden activation {self.hidden_activation}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigurationError(f"bad output activation {self.output_activation}")

    @property
    def d_in(self) -> int:
        return self.layer_widths[0]

    @property
    def d_out(self) -> int:
        return self.layer_widths[-1]

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def n_params(self) -> int:
        w = self.layer_widths
        return sum(w[i + 1] * (w[i] + 1) for i in range(len(w) - 1))

    def to_dict(self) -> dict:
        return {
            "layer_widths": list(self.layer_widths),
            "hidden_activation": self.hidden_activation.value,
            "output_activation": self.output_activation.value,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        return cls(
            tuple(d["layer_widths"]),
            Activation(d["hidden_activation"]),
            Activation(d["output_activation"]),
        )


@dataclass
class MlpParams:
    """Per-layer weights (out x in) and biases (out,)."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self) -> "MlpParams":
        return MlpParams([np.zeros_like(w) for w in self.weights], [np.zeros_like(b) for b in self.biases])

    def arrays(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays()])

    def assign_flat(self, vec: np.ndarray) -> None:
        vec = np.asarray(vec, dtype=np.float64)
        pos = 0
        for a in self.arrays():
            a[...] = vec[pos : pos + a.size].reshape(a.shape)
            pos += a.size
        if pos != vec.size:
            raise DimensionError(f"flat vector has {vec.size} entries, params need {pos}")

    def scaled_add(self, other: "MlpParams", alpha: float) -> None:
        """In place: self += alpha * other."""
        for a, b in zip(self.arrays(), other.arrays()):
            a += alpha * b

    def check_spec(self, spec: MlpSpec) -> None:
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise DimensionError("layer count does not match spec")
        w = spec.layer_widths
        for i, (W, b) in enumerate(zip(self.weights, self.biases)):
            if W.shape != (w[i + 1], w[i]) or b.shape != (w[i + 1],):
                raise DimensionError(
                    f"layer {i}: got W{W.shape} b{b.shape}, expected W{(w[i + 1], w[i])} b{(w[i + 1],)}"
                )

    def is_finite(self) -> bool:
        return all(np.isfinite(a).all() for a in self.arrays())


@dataclass
class ForwardTrace:
    """Activations per layer; ``activations[0]`` is the input itself."""

    pre_activations: list[np.ndarray] = field(default_factory=list)
    activations: list[np.ndarray] = field(default_factory=list)


def init_params(spec: MlpSpec, seed, scale: float = 1.0) -> MlpParams:
    """Uniform fan-in scaled weights on [-scale/sqrt(fan_in), scale/sqrt(fan_in)], zero biases.

    ``seed`` may be an int, a ``SeedSequence`` or a ``Generator``.
    """
    if not isinstance(spec, MlpSpec):
        raise ConfigurationError("init_params needs an MlpSpec")
    if scale < 0 or not np.isfinite(scale):
        raise ConfigurationError(f"scale must be >= 0, got {scale}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    weights, biases = [], []
    w = spec.layer_widths
    for i in range(spec.n_layers):
        bound = scale / np.sqrt(w[i])
        weights.append(rng.uniform(-bound, bound, size=(w[i + 1], w[i])) if bound > 0 else np.zeros((w[i + 1], w[i])))
        biases.append(np.zeros(w[i + 1]))
    return MlpParams(weights, biases)


def _activate(kind: Activation, x: np.ndarray) -> np.ndarray:
    if kind is Activation.TANH:
        return np.tanh(x)
    if kind is Activation.RELU:
        return np.maximum(x, 0.0)
    if kind is Activation.SIGMOID:
        return expit(x)
    return x


def _activation_backward(kind: Activation, delta, pre, post) -> np.ndarray:
    if kind is Activation.TANH:
        return kernels.tanh_backward(delta, post)
    if kind is Activation.RELU:
        return delta * (pre > 0)
    if kind is Activation.SIGMOID:
        return delta * post * (1.0 - post)
    return delta


def mlp_forward(spec: MlpSpec, params: MlpParams, x) -> tuple[np.ndarray, ForwardTrace]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[1] != spec.d_in:
        raise DimensionError(f"input has shape {x.shape}, spec expects (n, {spec.d_in})")
    if not np.isfinite(x).all():
        raise NumericError("non-finite network input")
    trace = ForwardTrace([], [x])
    h = x
    last = spec.n_layers - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        pre = h @ W.T + b
        kind = spec.output_activation if i == last else spec.hidden_activation
        h = _activate(kind, pre)
        trace.pre_activations.append(pre)
        trace.activations.append(h)
    return h, trace


def mlp_backward(spec: MlpSpec, params: MlpParams, trace: ForwardTrace, output_grad) -> tuple[MlpParams, np.ndarray]:
    """Vector-Jacobian product of ``output_grad`` through the network.

    Parameter gradients are summed over the batch; the input gradient is
    per row.
    """
    if len(trace.pre_activations) != spec.n_layers or len(trace.activations) != spec.n_layers + 1:
        raise DimensionError("trace does not match spec")
    g = np.asarray(output_grad, dtype=np.float64)
    if g.ndim == 1:
        g = g[:, None]
    n = trace.activations[0].shape[0]
    if g.shape != (n, spec.d_out):
        raise DimensionError(f"output_grad has shape {g.shape}, expected {(n, spec.d_out)}")
    grads_w = [None] * spec.n_layers
    grads_b = [None] * spec.n_layers
    last = spec.n_layers - 1
    delta = g
    for i in range(last, -1, -1):
        kind = spec.output_activation if i == last else spec.hidden_activation
        delta = _activation_backward(kind, delta, trace.pre_activations[i], trace.activations[i + 1])
        grads_w[i] = delta.T @ trace.activations[i]
        grads_b[i] = delta.sum(axis=0)
        delta = delta @ params.weights[i]
    return MlpParams(grads_w, grads_b), delta
