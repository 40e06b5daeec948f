"""Parameter sampling and collocation/evaluation point generation.

Diffusivities follow the cosine-pushforward rule p = mid + cos(z)*half with
z ~ U[0, pi], which concentrates samples near both range endpoints (the
arcsine distribution).  Training points are grid-jittered: one uniform draw
per cell of a regular partition, which keeps the Monte Carlo weights of the
plain uniform rule while reducing variance.  Interface points are
stratified per interface; in 1D the interfaces are the cut points
themselves and carry unit (counting-measure) weight.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Geometry, subdomain_index_many

__all__ = [
    "QuadratureSet",
    "sample_parameters",
    "sample_collocation",
    "validation_set",
    "midpoint_grid",
]

_INTERFACE_CLEARANCE = 1e-12
VALIDATION_EXTRA = 3


@dataclass(frozen=True)
class QuadratureSet:
    """Interior and interface evaluation points with their weights."""

    interior_points: np.ndarray  # (J1, d)
    interior_weights: np.ndarray  # (J1,)
    interior_subdomain: np.ndarray  # (J1,)
    interface_points: np.ndarray  # (J2, d)
    interface_weights: np.ndarray  # (J2,)
    interface_ids: np.ndarray  # (J2,) index into geometry.interfaces

    @property
    def n_interior(self) -> int:
        return self.interior_points.shape[0]

    @property
    def n_interface(self) -> int:
        return self.interface_points.shape[0]


def sample_parameters(rng, n: int, n_subdomains: int, p_min: float, p_max: float) -> np.ndarray:
    """(n, I) parameter draws, i.i.d. cosine-weighted per component."""
    if n < 1:
        raise ValueError("need at least one sample")
    if p_min <= 0:
        raise ValueError("p_min must be positive")
    z = rng.uniform(0.0, np.pi, size=(n, n_subdomains))
    mid = 0.5 * (p_min + p_max)
    half = 0.5 * (p_max - p_min)
    return mid + np.cos(z) * half


def _min_interface_distance(geometry: Geometry, points: np.ndarray) -> np.ndarray:
    dist = np.full(points.shape[0], np.inf)
    for ifc in geometry.interfaces:
        d = np.abs(points[:, ifc.axis] - ifc.position)
        if geometry.dimension == 2:
            lo, hi = ifc.span
            other = points[:, 1 - ifc.axis]
            on_span = (other >= lo) & (other <= hi)
            d = np.where(on_span, d, np.inf)
        dist = np.minimum(dist, d)
    return dist


def _jittered_interior(geometry: Geometry, n_per_axis: int, rng):
    """One uniform draw per cell; draws touching an interface are retried.

    1D places n_per_axis cells in every subdomain; 2D uses a global
    n x n cell grid.  Weights are the cell measures (equal to Vol/J1 for
    the uniform layouts of interest).
    """
    if geometry.dimension == 1:
        cells = []
        for lo, hi in zip(geometry.subdomain_lo[:, 0], geometry.subdomain_hi[:, 0]):
            edges = np.linspace(lo, hi, n_per_axis + 1)
            cells.append(np.stack([edges[:-1], edges[1:]], axis=1))
        cells = np.concatenate(cells, axis=0)
        pts = rng.uniform(cells[:, 0], cells[:, 1])[:, None]
        weights = cells[:, 1] - cells[:, 0]
    else:
        (a, b), (c, d) = geometry.bounds
        ex = np.linspace(a, b, n_per_axis + 1)
        ey = np.linspace(c, d, n_per_axis + 1)
        gx0, gy0 = np.meshgrid(ex[:-1], ey[:-1], indexing="ij")
        wx = (b - a) / n_per_axis
        wy = (d - c) / n_per_axis
        u = rng.uniform(0, 1, size=(n_per_axis, n_per_axis, 2))
        pts = np.stack(
            [gx0 + u[:, :, 0] * wx, gy0 + u[:, :, 1] * wy], axis=2
        ).reshape(-1, 2)
        weights = np.full(pts.shape[0], wx * wy)
    for _ in range(100):
        bad = _min_interface_distance(geometry, pts) <= _INTERFACE_CLEARANCE
        if not np.any(bad):
            return pts, weights
        jitter = rng.uniform(-1e-9, 1e-9, size=(int(bad.sum()), pts.shape[1]))
        pts[bad] += jitter
    raise RuntimeError("could not clear interior points off the interfaces")


def _interface_samples(geometry: Geometry, n_per_interface: int, rng):
    points, ids = [], []
    if not geometry.interfaces:
        return np.zeros((0, geometry.dimension)), np.zeros(0), np.zeros(0, dtype=int)
    if geometry.dimension == 1:
        for k, ifc in enumerate(geometry.interfaces):
            points.append([ifc.position])
            ids.append(k)
        weights = np.ones(len(points))
        return np.array(points), weights, np.array(ids, dtype=int)
    for k, ifc in enumerate(geometry.interfaces):
        lo, hi = ifc.span
        edges = np.linspace(lo, hi, n_per_interface + 1)
        t = rng.uniform(edges[:-1], edges[1:])
        for tv in t:
            points.append([ifc.position, tv] if ifc.axis == 0 else [tv, ifc.position])
            ids.append(k)
    points = np.array(points)
    ids = np.array(ids, dtype=int)
    total = geometry.interface_measure
    weights = np.full(points.shape[0], total / points.shape[0])
    return points, weights, ids


def sample_collocation(
    geometry: Geometry, n_interior_per_axis: int, n_per_interface: int, rng,
    rng_interface=None,
) -> QuadratureSet:
    """Fresh stochastic training points: jittered interior, stratified interfaces.

    A separate generator may drive the interface draws so the two streams
    never share state.
    """
    if n_interior_per_axis < 1 or n_per_interface < 1:
        raise ValueError("counts must be >= 1")
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    interior, w = _jittered_interior(geometry, n_interior_per_axis, rng)
    sub = subdomain_index_many(geometry, interior)
    ipts, iw, iid = _interface_samples(
        geometry, n_per_interface, rng if rng_interface is None else rng_interface
    )
    return QuadratureSet(interior, w, sub, ipts, iw, iid)


def validation_set(
    geometry: Geometry, n_interior_per_axis: int, n_per_interface: int, seed: int
) -> QuadratureSet:
    """Frozen validation points: the training rule with counts + 3 per axis.

    A pure function of the seed, so repeated calls return identical sets.
    """
    rng = np.random.default_rng(seed)
    n_iface = n_per_interface + (VALIDATION_EXTRA if geometry.dimension == 2 else 0)
    return sample_collocation(geometry, n_interior_per_axis + VALIDATION_EXTRA, n_iface, rng)


def midpoint_grid(geometry: Geometry, n_per_axis: int, n_per_interface: int) -> QuadratureSet:
    """Deterministic cell-center quadrature for evaluation and reporting.

    2D: centers of the uniform n x n partition, weight |cell| each; 1D:
    n centers per subdomain.  Interface midpoints carry their segment
    length over the per-interface count (1D: unit weights at the cuts).
    """
    if n_per_axis < 1:
        raise ValueError("counts must be >= 1")
    if geometry.dimension == 1:
        pts, weights, subs = [], [], []
        for i, (lo, hi) in enumerate(zip(geometry.subdomain_lo[:, 0], geometry.subdomain_hi[:, 0])):
            h = (hi - lo) / n_per_axis
            centers = lo + h * (np.arange(n_per_axis) + 0.5)
            pts.append(centers)
            weights.append(np.full(n_per_axis, h))
            subs.append(np.full(n_per_axis, i, dtype=int))
        interior = np.concatenate(pts)[:, None]
        w = np.concatenate(weights)
        sub = np.concatenate(subs)
        ipts, iw, iid = _interface_samples(geometry, 1, None)
        return QuadratureSet(interior, w, sub, ipts, iw, iid)

    (a, b), (c, d) = geometry.bounds
    hx = (b - a) / n_per_axis
    hy = (d - c) / n_per_axis
    cx = a + hx * (np.arange(n_per_axis) + 0.5)
    cy = c + hy * (np.arange(n_per_axis) + 0.5)
    gx, gy = np.meshgrid(cx, cy, indexing="ij")
    interior = np.stack([gx.ravel(), gy.ravel()], axis=1)
    if np.any(_min_interface_distance(geometry, interior) <= _INTERFACE_CLEARANCE):
        raise ValueError(
            "midpoint grid centers fall on an interface; choose a count that "
            "keeps cell centers clear (e.g. an even count for centered cuts)"
        )
    sub = subdomain_index_many(geometry, interior)
    w = np.full(interior.shape[0], hx * hy)
    points, ids, weights = [], [], []
    for k, ifc in enumerate(geometry.interfaces):
        lo, hi = ifc.span
        h = (hi - lo) / n_per_interface
        centers = lo + h * (np.arange(n_per_interface) + 0.5)
        for t in centers:
            points.append([ifc.position, t] if ifc.axis == 0 else [t, ifc.position])
            ids.append(k)
            weights.append(h)
    return QuadratureSet(
        interior, w, sub, np.array(points), np.array(weights), np.array(ids, dtype=int)
    )
