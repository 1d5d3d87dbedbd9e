"""Minimal MLP with hand-written forward/backward passes and Adam.

No autodiff anywhere: the backward pass is explicit reverse-mode algebra,
and every gradient in the toolkit is validated against central finite
differences through :func:`grad_check`.

Activations are tanh (hidden) and identity (output heads) only; both are
smooth, which keeps finite-difference checks clean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from elbo_kit.gaussian_core import RngState

_ACTIVATIONS = ("tanh", "identity")


@dataclass
class Layer:
    """One affine layer: ``weight`` is (out, in), ``bias`` is (out,)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise ValueError(
                f"layer shapes inconsistent: weight {self.weight.shape}, "
                f"bias {self.bias.shape}"
            )
        if self.activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")
        if not (np.all(np.isfinite(self.weight)) and np.all(np.isfinite(self.bias))):
            raise ValueError("layer parameters must be finite")


@dataclass
class MlpParams:
    """An MLP as an ordered list of layers with chaining dimensions."""

    layers: list[Layer]

    def __post_init__(self):
        for k in range(1, len(self.layers)):
            o_prev = self.layers[k - 1].weight.shape[0]
            i_next = self.layers[k].weight.shape[1]
            if o_prev != i_next:
                raise ValueError(
                    f"layer {k} expects input width {i_next} but layer {k - 1} "
                    f"outputs {o_prev}"
                )

    @property
    def in_dim(self) -> int:
        return self.layers[0].weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.layers[-1].weight.shape[0]


@dataclass
class LayerGrad:
    weight: np.ndarray
    bias: np.ndarray


@dataclass
class Gradients:
    """Per-parameter partials, shape-congruent with an MlpParams."""

    layers: list[LayerGrad]


@dataclass
class ForwardTape:
    """Intermediates of one forward pass: input, pre-activations, activations."""

    x: np.ndarray
    pre: list[np.ndarray] = field(default_factory=list)
    act: list[np.ndarray] = field(default_factory=list)


def init_mlp(layer_sizes: list[int], rng: RngState) -> MlpParams:
    """Seeded scaled-uniform initialization.

    Weights are uniform in +-sqrt(6 / (fan_in + fan_out)), biases zero.
    Hidden layers use tanh, the last layer is identity.  Uniforms are drawn
    row-major per weight matrix, layer by layer, so the result is a pure
    function of (layer_sizes, rng state).
    """
    if len(layer_sizes) < 2:
        raise ValueError("need at least an input and an output size")
    layers = []
    for k in range(len(layer_sizes) - 1):
        fan_in, fan_out = layer_sizes[k], layer_sizes[k + 1]
        bound = math.sqrt(6.0 / (fan_in + fan_out))
        u = rng.uniforms(fan_out * fan_in).reshape(fan_out, fan_in)
        act = "identity" if k == len(layer_sizes) - 2 else "tanh"
        layers.append(
            Layer(weight=bound * (2.0 * u - 1.0), bias=np.zeros(fan_out), activation=act)
        )
    return MlpParams(layers=layers)


def _apply_activation(tag: str, pre: np.ndarray) -> np.ndarray:
    if tag == "tanh":
        return np.tanh(pre)
    return pre


def _activation_grad(tag: str, act: np.ndarray) -> np.ndarray:
    # derivative expressed through the stored post-activation value
    if tag == "tanh":
        return 1.0 - act**2
    return np.ones_like(act)


def forward(params: MlpParams, x: np.ndarray) -> tuple[np.ndarray, ForwardTape]:
    """Batched forward pass.

    Args:
        params: the network.
        x: inputs, shape ``(batch, in_dim)``.

    Returns:
        ``(y, tape)`` with y shape ``(batch, out_dim)``.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != params.in_dim:
        raise ValueError(f"x has shape {x.shape}, expected (batch, {params.in_dim})")
    tape = ForwardTape(x=x)
    h = x
    for layer in params.layers:
        pre = h @ layer.weight.T + layer.bias
        h = _apply_activation(layer.activation, pre)
        tape.pre.append(pre)
        tape.act.append(h)
    return h, tape


def replay_forward(params: MlpParams, tape: ForwardTape) -> np.ndarray:
    """Recompute the forward output from a tape's recorded input."""
    y, _ = forward(params, tape.x)
    return y


def backward(
    params: MlpParams, tape: ForwardTape, upstream: np.ndarray
) -> tuple[Gradients, np.ndarray]:
    """Reverse-mode derivatives of sum(upstream * y) for a taped forward pass.

    Args:
        params: the network the tape came from.
        tape: intermediates from :func:`forward`.
        upstream: d(objective)/d(output), shape ``(batch, out_dim)``.

    Returns:
        ``(grads, input_grad)`` where grads is shape-congruent with params
        and input_grad has the shape of the forward input.
    """
    upstream = np.asarray(upstream, dtype=np.float64)
    if len(tape.act) != len(params.layers):
        raise ValueError("tape does not match params (layer count differs)")
    if upstream.shape != tape.act[-1].shape:
        raise ValueError(
            f"upstream has shape {upstream.shape}, expected {tape.act[-1].shape}"
        )
    grads = [None] * len(params.layers)
    delta = upstream
    for k in range(len(params.layers) - 1, -1, -1):
        layer = params.layers[k]
        delta = delta * _activation_grad(layer.activation, tape.act[k])
        below = tape.act[k - 1] if k > 0 else tape.x
        grads[k] = LayerGrad(weight=delta.T @ below, bias=np.sum(delta, axis=0))
        delta = delta @ layer.weight
    return Gradients(layers=grads), delta


def zeros_like_grads(params: MlpParams) -> Gradients:
    return Gradients(
        layers=[
            LayerGrad(weight=np.zeros_like(l.weight), bias=np.zeros_like(l.bias))
            for l in params.layers
        ]
    )


def add_grads(a: Gradients, b: Gradients) -> Gradients:
    return Gradients(
        layers=[
            LayerGrad(weight=ga.weight + gb.weight, bias=ga.bias + gb.bias)
            for ga, gb in zip(a.layers, b.layers)
        ]
    )


def grad_check(params: MlpParams, objective, h: float) -> float:
    """Worst-case relative disagreement of analytic vs numeric gradients.

    Args:
        params: point at which to check.
        objective: maps an MlpParams to ``(value, Gradients)``; the value is
            re-evaluated at parameter-wise perturbations for the central
            difference (f(w+h) - f(w-h)) / 2h.
        h: step size, in [1e-7, 1e-3].

    Returns:
        max over parameters of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
    """
    if not 1e-7 <= h <= 1e-3:
        raise ValueError(f"h must lie in [1e-7, 1e-3], got {h}")
    value, analytic = objective(params)
    if not math.isfinite(value):
        raise ValueError(f"objective is non-finite at the base point: {value}")

    def value_at(p: MlpParams) -> float:
        v, _ = objective(p)
        if not math.isfinite(v):
            raise ValueError("objective returned a non-finite value during the check")
        return v

    worst = 0.0
    for k, layer in enumerate(params.layers):
        for arr_name in ("weight", "bias"):
            base = getattr(layer, arr_name)
            an = getattr(analytic.layers[k], arr_name)
            for idx in np.ndindex(base.shape):
                orig = base[idx]
                base[idx] = orig + h
                f_plus = value_at(params)
                base[idx] = orig - h
                f_minus = value_at(params)
                base[idx] = orig
                numeric = (f_plus - f_minus) / (2.0 * h)
                a = float(an[idx])
                err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
                worst = max(worst, err)
    return worst


@dataclass(frozen=True)
class AdamConfig:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamState:
    step: int
    m: Gradients
    v: Gradients


def init_adam_state(params: MlpParams) -> AdamState:
    return AdamState(step=0, m=zeros_like_grads(params), v=zeros_like_grads(params))


def adam_step(
    params: MlpParams,
    grads: Gradients,
    state: AdamState,
    hyper: AdamConfig = AdamConfig(),
) -> tuple[MlpParams, AdamState]:
    """One Adam update with bias correction; inputs are not mutated."""
    t = state.step + 1
    c1 = 1.0 - hyper.beta1**t
    c2 = 1.0 - hyper.beta2**t
    new_layers, new_m, new_v = [], [], []
    for layer, g, m, v in zip(params.layers, grads.layers, state.m.layers, state.v.layers):
        upd = {}
        moms = {}
        for name in ("weight", "bias"):
            gp = getattr(g, name)
            mp = hyper.beta1 * getattr(m, name) + (1.0 - hyper.beta1) * gp
            vp = hyper.beta2 * getattr(v, name) + (1.0 - hyper.beta2) * gp**2
            step = hyper.lr * (mp / c1) / (np.sqrt(vp / c2) + hyper.eps)
            upd[name] = getattr(layer, name) - step
            moms[name] = (mp, vp)
        new_layers.append(
            Layer(weight=upd["weight"], bias=upd["bias"], activation=layer.activation)
        )
        new_m.append(LayerGrad(weight=moms["weight"][0], bias=moms["bias"][0]))
        new_v.append(LayerGrad(weight=moms["weight"][1], bias=moms["bias"][1]))
    return (
        MlpParams(layers=new_layers),
        AdamState(step=t, m=Gradients(layers=new_m), v=Gradients(layers=new_v)),
    )
