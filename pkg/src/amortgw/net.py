"""Multi-layer perceptrons with hand-written backpropagation and Adam."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import List

import numpy as np

from .errors import InvalidInputError, InvalidStateError, NumericalError

ACTIVATIONS = ("relu", "tanh")


@dataclass(frozen=True)
class MLPSpec:
    layer_widths: tuple
    activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        if len(widths) < 2 or min(widths) < 1:
            raise InvalidInputError(f"need >= 2 layer widths, all >= 1; got {self.layer_widths}")
        if self.activation not in ACTIVATIONS:
            raise InvalidInputError(f"unknown activation {self.activation!r}")
        object.__setattr__(self, "layer_widths", widths)

    @property
    def n_layers(self):
        return len(self.layer_widths) - 1

    def to_dict(self):
        return {"layer_widths": list(self.layer_widths), "activation": self.activation, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple(d["layer_widths"]), d.get("activation", "relu"), int(d.get("seed", 0)))


def default_spec(d_in, d_out, hidden=256, n_layers=3, activation="relu", seed=0):
    """``n_layers`` affine maps with ``hidden`` units between them."""
    return MLPSpec((d_in,) + (hidden,) * (n_layers - 1) + (d_out,), activation, seed)


@dataclass
class MLPParams:
    weights: List[np.ndarray]
    biases: List[np.ndarray]

    def arrays(self):
        """Flat list ``[W0, b0, W1, b1, ...]``."""
        out = []
        for W, b in zip(self.weights, self.biases):
            out += [W, b]
        return out

    @classmethod
    def from_arrays(cls, arrays):
        return cls(list(arrays[0::2]), list(arrays[1::2]))

    def copy(self):
        return MLPParams([W.copy() for W in self.weights], [b.copy() for b in self.biases])

    def zeros_like(self):
        return MLPParams([np.zeros_like(W) for W in self.weights], [np.zeros_like(b) for b in self.biases])

    def norm(self):
        return float(np.sqrt(sum(np.sum(a * a) for a in self.arrays())))


def init_params(spec):
    """Fan-in scaled uniform weights, zero biases.

    ReLU layers use the He bound ``sqrt(6 / fan_in)``, tanh layers the
    Glorot bound ``sqrt(6 / (fan_in + fan_out))``. Draws come from a
    Philox stream keyed by ``spec.seed``.
    """
    rng = np.random.Generator(np.random.Philox(spec.seed))
    weights, biases = [], []
    for fan_in, fan_out in zip(spec.layer_widths[:-1], spec.layer_widths[1:]):
        if spec.activation == "relu":
            bound = np.sqrt(6.0 / fan_in)
        else:
            bound = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        biases.append(np.zeros(fan_out))
    return MLPParams(weights, biases)


@dataclass
class Tape:
    params: MLPParams
    inputs: List[np.ndarray] = field(default_factory=list)
    preacts: List[np.ndarray] = field(default_factory=list)
    activation: str = "relu"


def _act(z, kind):
    return np.maximum(z, 0.0) if kind == "relu" else np.tanh(z)


def _act_grad(z, a, kind):
    return (z > 0).astype(z.dtype) if kind == "relu" else 1.0 - a * a


def forward(params, inputs, activation="relu"):
    """Apply the network row-wise; returns ``(outputs, tape)``.

    The activation follows every affine map except the last.
    """
    if isinstance(activation, MLPSpec):
        activation = activation.activation
    X = np.asarray(inputs, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.weights[0].shape[1]:
        raise InvalidInputError(
            f"input width {X.shape[-1] if X.ndim else None} does not match network input width {params.weights[0].shape[1]}"
        )
    tape = Tape(params, activation=activation)
    h = X
    last = len(params.weights) - 1
    for i, (W, b) in enumerate(zip(params.weights, params.biases)):
        tape.inputs.append(h)
        z = h @ W.T + b
        tape.preacts.append(z)
        h = z if i == last else _act(z, activation)
    return h, tape


def backward(params, tape, grad_outputs):
    """Reverse-mode pass for a scalar with output gradient ``grad_outputs``.

    Returns ``(grad_params, grad_inputs)``.
    """
    if tape.params is not params or len(tape.inputs) != len(params.weights):
        raise InvalidStateError("tape was not produced by a forward pass with these parameters")
    G = np.asarray(grad_outputs, dtype=np.float64)
    if G.shape != tape.preacts[-1].shape:
        raise InvalidInputError(f"grad_outputs shape {G.shape} != output shape {tape.preacts[-1].shape}")
    n = len(params.weights)
    gW, gb = [None] * n, [None] * n
    for i in reversed(range(n)):
        if i != n - 1:
            z = tape.preacts[i]
            G = G * _act_grad(z, tape.inputs[i + 1], tape.activation)
        gW[i] = G.T @ tape.inputs[i]
        gb[i] = G.sum(axis=0)
        G = G @ params.weights[i]
    return MLPParams(gW, gb), G


@dataclass
class OptState:
    """Adam moments, one pair per parameter array."""

    m: List[np.ndarray]
    v: List[np.ndarray]
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def create(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        arrays = params.arrays()
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays], 0, lr, beta1, beta2, eps)


def _param_path(k):
    return f"layer{k // 2}.{'weight' if k % 2 == 0 else 'bias'}"


def opt_step(state, params, grads):
    """One bias-corrected Adam update. Inputs are not modified."""
    p_arr, g_arr = params.arrays(), grads.arrays()
    if len(p_arr) != len(g_arr) or len(p_arr) != len(state.m):
        raise InvalidInputError("parameter, gradient and optimizer-state structures differ")
    for k, (p, g) in enumerate(zip(p_arr, g_arr)):
        if p.shape != g.shape:
            raise InvalidInputError(f"gradient shape mismatch at {_param_path(k)}: {g.shape} vs {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericalError(f"non-finite gradient at {_param_path(k)}")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_m, new_v, new_p = [], [], []
    for p, g, m, v in zip(p_arr, g_arr, state.m, state.v):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1**t)
        v_hat = v / (1 - b2**t)
        new_p.append(p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps))
        new_m.append(m)
        new_v.append(v)
    new_state = OptState(new_m, new_v, t, state.lr, b1, b2, state.eps)
    return new_state, MLPParams.from_arrays(new_p)


def params_to_dict(params):
    return {
        "weights": [W.tolist() for W in params.weights],
        "biases": [b.tolist() for b in params.biases],
    }


def params_from_dict(d):
    return MLPParams([np.array(W, dtype=np.float64) for W in d["weights"]], [np.array(b, dtype=np.float64) for b in d["biases"]])


def checkpoint_to_dict(spec, params, state=None):
    doc = {"spec": spec.to_dict(), **params_to_dict(params)}
    if state is not None:
        doc["optimizer"] = {
            "m": [a.tolist() for a in state.m],
            "v": [a.tolist() for a in state.v],
            "step": state.step,
            "lr": state.lr,
            "beta1": state.beta1,
            "beta2": state.beta2,
            "eps": state.eps,
        }
    return doc


def checkpoint_from_dict(doc):
    spec = MLPSpec.from_dict(doc["spec"])
    params = params_from_dict(doc)
    state = None
    if "optimizer" in doc:
        o = doc["optimizer"]
        state = OptState(
            [np.array(a, dtype=np.float64) for a in o["m"]],
            [np.array(a, dtype=np.float64) for a in o["v"]],
            int(o["step"]),
            o["lr"],
            o["beta1"],
            o["beta2"],
            o["eps"],
        )
    return spec, params, state


def save_checkpoint(path, spec, params, state=None):
    with open(path, "w") as fh:
        json.dump(checkpoint_to_dict(spec, params, state), fh)


def load_checkpoint(path):
    with open(path) as fh:
        return checkpoint_from_dict(json.load(fh))
