"""Multi-output tanh network with exact spatial jets and a hand reverse pass.

The forward pass propagates (value, Jacobian, Hessian) triples through each
affine+tanh layer with the exact tanh chain rule, so every output carries an
analytic spatial gradient and Laplacian.  The companion reverse pass
back-propagates adjoint seeds placed on those jets to the weights and
biases; together they support residual losses that involve Laplacians and
one-sided interface traces without any autodiff framework.

Spatial dimension is 1 or 2, so carrying full per-layer Hessians is cheap
and keeps the product-rule algebra with the cutoff fields exact.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "NetConfig",
    "MlpParams",
    "RawJets",
    "AdamState",
    "init_params",
    "forward_jets",
    "backward_jets",
    "adam_step",
    "linear_lr",
]


@dataclass(frozen=True)
class NetConfig:
    input_dim: int
    hidden: tuple[int, ...]
    n1: int
    n2: int

    def __post_init__(self):
        if self.input_dim not in (1, 2):
            raise ValueError("input dimension must be 1 or 2")
        if any(w < 1 for w in self.hidden) or self.n1 < 1 or self.n2 < 1:
            raise ValueError("all widths must be >= 1")

    @property
    def n_outputs(self) -> int:
        return self.n1 + self.n2

    @property
    def widths(self) -> tuple[int, ...]:
        return (self.input_dim, *self.hidden, self.n_outputs)


@dataclass
class MlpParams:
    """Per-layer weights/biases; flat layout is [A1, b1, A2, b2, ...]."""

    config: NetConfig
    layers: list[tuple[np.ndarray, np.ndarray]]

    @property
    def n_params(self) -> int:
        return sum(a.size + b.size for a, b in self.layers)

    def to_flat(self) -> np.ndarray:
        return np.concatenate([np.concatenate([a.ravel(), b]) for a, b in self.layers])

    @classmethod
    def from_flat(cls, config: NetConfig, flat: np.ndarray) -> "MlpParams":
        widths = config.widths
        layers = []
        pos = 0
        for m_in, m_out in zip(widths[:-1], widths[1:]):
            a = flat[pos : pos + m_in * m_out].reshape(m_out, m_in)
            pos += m_in * m_out
            b = flat[pos : pos + m_out]
            pos += m_out
            layers.append((a.copy(), b.copy()))
        if pos != flat.size:
            raise ValueError("flat vector length does not match the configuration")
        return cls(config, layers)


def init_params(config: NetConfig, seed: int) -> MlpParams:
    """Glorot-uniform weights, zero biases, reproducible from the seed."""
    rng = np.random.default_rng(seed)
    layers = []
    widths = config.widths
    for m_in, m_out in zip(widths[:-1], widths[1:]):
        limit = np.sqrt(6.0 / (m_in + m_out))
        a = rng.uniform(-limit, limit, size=(m_out, m_in))
        layers.append((a, np.zeros(m_out)))
    return MlpParams(config, layers)


@dataclass
class RawJets:
    """Values, gradients and Hessians of all outputs at a point batch."""

    value: np.ndarray  # (J, N)
    gradient: np.ndarray  # (J, N, d)
    hessian: np.ndarray  # (J, N, d, d)

    @property
    def laplacian(self) -> np.ndarray:
        return np.trace(self.hessian, axis1=2, axis2=3)


@dataclass
class Tape:
    """Intermediates retained for the reverse pass."""

    h_value: list = field(default_factory=list)  # inputs to each layer
    h_grad: list = field(default_factory=list)
    h_hess: list = field(default_factory=list)
    z_grad: list = field(default_factory=list)  # pre-activation jets
    z_hess: list = field(default_factory=list)
    t: list = field(default_factory=list)  # tanh(z)


def forward_jets(params: MlpParams, points: np.ndarray, need_tape: bool = False):
    """Exact (value, gradient, Hessian) of every output at every point."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    d = params.config.input_dim
    if points.shape[1] != d:
        raise ValueError(f"points must have shape (J, {d})")
    for a, b in params.layers:
        if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite network parameters")
    n = points.shape[0]
    h = points
    hg = np.broadcast_to(np.eye(d)[None, :, :], (n, d, d)).copy()
    hh = np.zeros((n, d, d, d))
    tape = Tape() if need_tape else None
    for a, b in params.layers:
        zg = np.einsum("om,jmd->jod", a, hg)
        zh = np.einsum("om,jmde->jode", a, hh)
        z = h @ a.T + b
        t = np.tanh(z)
        t1 = 1.0 - t * t
        t2 = -2.0 * t * t1
        if need_tape:
            tape.h_value.append(h)
            tape.h_grad.append(hg)
            tape.h_hess.append(hh)
            tape.z_grad.append(zg)
            tape.z_hess.append(zh)
            tape.t.append(t)
        h = t
        hg = t1[:, :, None] * zg
        hh = t2[:, :, None, None] * zg[:, :, :, None] * zg[:, :, None, :] + t1[
            :, :, None, None
        ] * zh
    jets = RawJets(h, hg, hh)
    return (jets, tape) if need_tape else jets


def backward_jets(
    params: MlpParams,
    tape: Tape,
    bar_value: np.ndarray,
    bar_grad: np.ndarray,
    bar_hess: np.ndarray,
) -> np.ndarray:
    """Adjoint pass: gradient of sum(bar . output jets) w.r.t. flat parameters.

    The seeds are the partial derivatives of a scalar objective with respect
    to the output values, gradients and Hessians produced by forward_jets on
    the same points.
    """
    yv, yg, yh = bar_value, bar_grad, bar_hess
    grads = []
    for layer in range(len(params.layers) - 1, -1, -1):
        a, _ = params.layers[layer]
        t = tape.t[layer]
        zg = tape.z_grad[layer]
        zh = tape.z_hess[layer]
        t1 = 1.0 - t * t
        t2 = -2.0 * t * t1
        t3 = -2.0 * (t1 * t1 + t * t2)

        # through the tanh: y = t, ygrad = t1*zg, yhess = t2*zg zg^T + t1*zh
        zv_bar = (
            yv * t1
            + np.einsum("jnd,jnd->jn", yg, zg) * t2
            + np.einsum("jnde,jnd,jne->jn", yh, zg, zg) * t3
            + np.einsum("jnde,jnde->jn", yh, zh) * t2
        )
        zg_bar = (
            yg * t1[:, :, None]
            + t2[:, :, None]
            * (np.einsum("jnde,jne->jnd", yh, zg) + np.einsum("jned,jne->jnd", yh, zg))
        )
        zh_bar = yh * t1[:, :, None, None]

        # through the affine map: z = h A^T + b, zg = A hg, zh = A hh
        h, hg, hh = tape.h_value[layer], tape.h_grad[layer], tape.h_hess[layer]
        a_bar = (
            zv_bar.T @ h
            + np.einsum("jnd,jmd->nm", zg_bar, hg)
            + np.einsum("jnde,jmde->nm", zh_bar, hh)
        )
        b_bar = zv_bar.sum(axis=0)
        grads.append(np.concatenate([a_bar.ravel(), b_bar]))

        if layer > 0:
            yv = zv_bar @ a
            yg = np.einsum("nm,jnd->jmd", a, zg_bar)
            yh = np.einsum("nm,jnde->jmde", a, zh_bar)
    return np.concatenate(grads[::-1])


@dataclass
class AdamState:
    """First/second moment accumulators aligned with the flat layout."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n_params: int) -> "AdamState":
        return cls(np.zeros(n_params), np.zeros(n_params), 0)


def adam_step(
    state: AdamState,
    flat_params: np.ndarray,
    grad: np.ndarray,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> np.ndarray:
    """One Adam update with bias correction; mutates the state, returns params."""
    state.t += 1
    state.m = beta1 * state.m + (1 - beta1) * grad
    state.v = beta2 * state.v + (1 - beta2) * grad * grad
    m_hat = state.m / (1 - beta1**state.t)
    v_hat = state.v / (1 - beta2**state.t)
    return flat_params - lr * m_hat / (np.sqrt(v_hat) + eps)


def linear_lr(lr_start: float, lr_end: float, iteration: int, total: int) -> float:
    """Linear interpolation over the iteration count (0-based iteration)."""
    frac = iteration / total if total > 0 else 1.0
    return lr_start + (lr_end - lr_start) * frac
