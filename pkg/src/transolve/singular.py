"""Singular trial functions r^L mu(theta) eta(r) and their residual sources.

Each singular vertex contributes one trial function per selected angular
eigenpair.  The function itself is supported on the disk r < delta2; the
residual source produced by the radial cutoff,

    S = 2 L r^(L-1) mu eta' + r^L mu (eta'' + eta'/r),

lives only on the transition annulus delta1 < r < delta2, so no Laplacian
is ever evaluated near the vertex where r^(L-2) would blow up.  The s
inside the printed source formula is the cutoff-free part r^L mu.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cutoffs import CutoffConfig, eta_jet
from .eigen import EigenPair, angular_eval
from .geometry import Geometry

__all__ = ["SingularBasis", "eval_s", "eval_S_source", "singular_columns"]

_GRAD_GUARD = 1e-12


@dataclass
class SingularBasis:
    """Selected eigenpairs per vertex plus the shared radial cutoff config."""

    geometry: Geometry
    config: CutoffConfig
    pairs_per_vertex: list[list[EigenPair]]

    @property
    def n_columns(self) -> int:
        return sum(len(p) for p in self.pairs_per_vertex)

    def columns(self):
        """Flat (vertex_id, pair_id) order: vertex-major, pairs sorted."""
        for i, pairs in enumerate(self.pairs_per_vertex):
            for j in range(len(pairs)):
                yield i, j


def _polar(points: np.ndarray, vertex: np.ndarray):
    dx = points - vertex[None, :]
    r = np.hypot(dx[:, 0], dx[:, 1])
    theta = np.mod(np.arctan2(dx[:, 1], dx[:, 0]), 2 * np.pi)
    return r, theta


def eval_s(basis: SingularBasis, vertex_id: int, pair_id: int, points, gradient=True):
    """Value (and Cartesian gradient) of one singular trial function.

    With exponent < 1 the gradient blows up at the vertex; evaluation there
    is guarded at r >= 1e-12 when the gradient is requested.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pair = basis.pairs_per_vertex[vertex_id][pair_id]
    vertex = basis.geometry.singular_vertices[vertex_id]
    r, theta = _polar(points, vertex)
    lam = pair.exponent
    if gradient and np.any((r < _GRAD_GUARD) & (r > 0)) or (gradient and lam < 1 and np.any(r == 0)):
        raise ValueError("gradient requested inside the guard radius of the vertex")
    eta, deta, _ = eta_jet(r, basis.config)
    mu, dmu = angular_eval(pair, theta)
    rl = np.where(r > 0, r**lam, 0.0)
    value = rl * mu * eta
    if not gradient:
        return value
    with np.errstate(divide="ignore", invalid="ignore"):
        ds_dr = lam * r ** (lam - 1) * mu * eta + rl * mu * deta
        ds_dt_over_r = r ** (lam - 1) * dmu * eta
    ds_dr = np.where(r > 0, ds_dr, 0.0)
    ds_dt_over_r = np.where(r > 0, ds_dt_over_r, 0.0)
    ct, st = np.cos(theta), np.sin(theta)
    grad = np.stack([ds_dr * ct - ds_dt_over_r * st, ds_dr * st + ds_dt_over_r * ct], axis=1)
    outside = r >= basis.config.delta2
    value = np.where(outside, 0.0, value)
    grad[outside] = 0.0
    return value, grad


def eval_S_source(basis: SingularBasis, vertex_id: int, pair_id: int, points):
    """Residual source of one singular column; zero off the annulus."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    pair = basis.pairs_per_vertex[vertex_id][pair_id]
    vertex = basis.geometry.singular_vertices[vertex_id]
    r, theta = _polar(points, vertex)
    out = np.zeros(points.shape[0])
    ann = (r > basis.config.delta1) & (r < basis.config.delta2)
    if not np.any(ann):
        return out
    ra = r[ann]
    _, deta, ddeta = eta_jet(ra, basis.config)
    mu, _ = angular_eval(pair, theta[ann])
    lam = pair.exponent
    out[ann] = 2 * lam * ra ** (lam - 1) * mu * deta + ra**lam * mu * (ddeta + deta / ra)
    return out


def singular_columns(basis: SingularBasis, points) -> np.ndarray:
    """Stacked residual-source columns at interior points, shape (J, n_cols)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    cols = [eval_S_source(basis, i, j, points) for i, j in basis.columns()]
    if not cols:
        return np.zeros((points.shape[0], 0))
    return np.stack(cols, axis=1)
