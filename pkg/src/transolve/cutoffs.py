"""Cutoff fields that imprint the required regularity on raw network outputs.

Four families, all with analytic value/gradient/Hessian:

* boundary cutoff B(x): normalized tensor-product parabola vanishing on the
  outer boundary;
* gradient-jump cutoffs psi: normalized approximate-distance compositions
  (sum d^-2)^(-1/2) over a set of interface lines, zero on each line with
  one-sided normal slopes of exactly +-1 in the limit;
* singularity-exclusion vectors Phi1/Phi2 built from 1 - eta(|x - x_n|),
  block-constant so each output group is tied to one vertex;
* the radial transition eta itself, a C^2 quintic smoothstep equal to 1
  inside delta1 and 0 outside delta2.

Composed basis functions are w = B * (wbar ⊙ Phi1) and
v = B * (vbar ⊙ Psi ⊙ Phi2); this module supplies the composite cutoff
scalars c_n with their gradients and Laplacians so callers can apply the
exact second-order product rule, plus one-sided trace coefficients at
interface points where Psi kinks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Geometry

__all__ = [
    "CutoffConfig",
    "ScalarJet",
    "default_cutoff_config",
    "eta_jet",
    "boundary_cutoff_jet",
    "jump_adf_jet",
    "exclusion_vectors_jet",
    "composition_factors",
    "interface_trace_factors",
    "apply_cutoffs",
    "interface_lines",
]


@dataclass(frozen=True)
class CutoffConfig:
    """Transition radii of the radial cutoff around singular vertices."""

    delta1: float
    delta2: float

    def __post_init__(self):
        if not 0 < self.delta1 < self.delta2:
            raise ValueError("need 0 < delta1 < delta2")


@dataclass
class ScalarJet:
    """Value, gradient and (symmetric) Hessian of a scalar field at points."""

    value: np.ndarray  # (J,)
    gradient: np.ndarray  # (J, d)
    hessian: np.ndarray  # (J, d, d)

    @property
    def laplacian(self) -> np.ndarray:
        return np.trace(self.hessian, axis1=1, axis2=2)

    def __mul__(self, other: "ScalarJet") -> "ScalarJet":
        v = self.value * other.value
        g = self.value[:, None] * other.gradient + other.value[:, None] * self.gradient
        cross = self.gradient[:, :, None] * other.gradient[:, None, :]
        h = (
            self.value[:, None, None] * other.hessian
            + other.value[:, None, None] * self.hessian
            + cross
            + np.swapaxes(cross, 1, 2)
        )
        return ScalarJet(v, g, h)

    @staticmethod
    def ones(n: int, d: int) -> "ScalarJet":
        return ScalarJet(np.ones(n), np.zeros((n, d)), np.zeros((n, d, d)))


def default_cutoff_config(geometry: Geometry) -> CutoffConfig:
    """delta2 = 0.45 * (closest other vertex or outer boundary), delta1 = delta2/2.

    Keeps every transition ball strictly inside the subdomains touching its
    vertex and disjoint from all other balls, for any grid layout.
    """
    if geometry.dimension == 1 or geometry.n_singular == 0:
        return CutoffConfig(0.25, 0.5)  # unused in 1D; placeholder radii
    verts = geometry.singular_vertices
    dmin = np.inf
    for i, (vx, vy) in enumerate(verts):
        for a, b in [geometry.bounds[0]]:
            dmin = min(dmin, vx - a, b - vx)
        for a, b in [geometry.bounds[1]]:
            dmin = min(dmin, vy - a, b - vy)
        for j, (ux, uy) in enumerate(verts):
            if j != i:
                dmin = min(dmin, float(np.hypot(ux - vx, uy - vy)))
    d2 = 0.45 * dmin
    return CutoffConfig(d2 / 2, d2)


def eta_jet(r, config: CutoffConfig):
    """Radial cutoff eta(r) with first and second derivatives.

    eta = 1 for r <= delta1, 0 for r >= delta2 and the C^2 quintic
    smoothstep 1 - (10 t^3 - 15 t^4 + 6 t^5) in between, t normalized to
    the transition annulus.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r < 0):
        raise ValueError("radius must be nonnegative")
    d1, d2 = config.delta1, config.delta2
    width = d2 - d1
    t = np.clip((r - d1) / width, 0.0, 1.0)
    s = 10 * t**3 - 15 * t**4 + 6 * t**5
    ds = (30 * t**2 - 60 * t**3 + 30 * t**4) / width
    dds = (60 * t - 180 * t**2 + 120 * t**3) / width**2
    return 1.0 - s, -ds, -dds


def boundary_cutoff_jet(points: np.ndarray, geometry: Geometry) -> ScalarJet:
    """Tensor-product parabola vanishing on the outer boundary, max 1."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    facs, dfacs, ddfacs = [], [], []
    for k, (a, b) in enumerate(geometry.bounds):
        x = points[:, k]
        norm = ((b - a) / 2) ** 2
        facs.append((x - a) * (b - x) / norm)
        dfacs.append((a + b - 2 * x) / norm)
        ddfacs.append(np.full(n, -2.0 / norm))
    value = np.prod(facs, axis=0)
    grad = np.empty((n, d))
    hess = np.empty((n, d, d))
    for k in range(d):
        others = np.prod([facs[m] for m in range(d) if m != k], axis=0) if d > 1 else 1.0
        grad[:, k] = dfacs[k] * others
        hess[:, k, k] = ddfacs[k] * others
        for m in range(k + 1, d):
            hess[:, k, m] = hess[:, m, k] = dfacs[k] * dfacs[m]
    return ScalarJet(value, grad, hess)


def interface_lines(geometry: Geometry, axis=None) -> list[tuple[int, float]]:
    """Distinct interface carrier lines as (axis, position) pairs.

    ``axis=0`` selects vertical lines, ``axis=1`` horizontal ones, ``None``
    all of them (the 1D case, where every interface is a point on axis 0).
    """
    seen = []
    for ifc in geometry.interfaces:
        key = (ifc.axis, ifc.position)
        if (axis is None or ifc.axis == axis) and key not in seen:
            seen.append(key)
    return seen


def jump_adf_jet(points: np.ndarray, lines: list[tuple[int, float]]) -> ScalarJet:
    """Normalized approximate distance psi = (sum_g d_g^-2)^(-1/2).

    d_g is the perpendicular distance to interface line g.  psi vanishes on
    every line of the set with one-sided normal slopes +-1; evaluation
    exactly on a line is rejected (use the trace identities instead).
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    if not lines:
        raise ValueError("need at least one interface line")
    s = np.zeros(n)
    ds = np.zeros((n, d))
    dds = np.zeros((n, d, d))
    for axis, pos in lines:
        h = points[:, axis] - pos
        if np.any(np.abs(h) < 1e-300):
            raise ValueError("point lies exactly on an interface line of the subset")
        s += h**-2
        ds[:, axis] += -2 * h**-3
        dds[:, axis, axis] += 6 * h**-4
    value = s**-0.5
    grad = -0.5 * s[:, None] ** -1.5 * ds
    hess = (
        0.75 * s[:, None, None] ** -2.5 * ds[:, :, None] * ds[:, None, :]
        - 0.5 * s[:, None, None] ** -1.5 * dds
    )
    return ScalarJet(value, grad, hess)


def _phi_jets(points: np.ndarray, geometry: Geometry, config: CutoffConfig) -> list[ScalarJet]:
    """phi_n = 1 - eta(|x - x_n|) for every singular vertex, full jets."""
    points = np.atleast_2d(points)
    n, d = points.shape
    jets = []
    for vx in geometry.singular_vertices:
        dx = points - vx[None, :]
        r = np.linalg.norm(dx, axis=1)
        eta, deta, ddeta = eta_jet(r, config)
        safe_r = np.where(r > 1e-300, r, 1.0)
        rhat = dx / safe_r[:, None]
        grad = -deta[:, None] * rhat
        outer = rhat[:, :, None] * rhat[:, None, :]
        eye = np.eye(d)[None, :, :]
        hess = -ddeta[:, None, None] * outer - (deta / safe_r)[:, None, None] * (eye - outer)
        # inside r <= delta1 eta is identically 1, all derivatives vanish
        flat = r <= config.delta1
        grad[flat] = 0.0
        hess[flat] = 0.0
        jets.append(ScalarJet(1.0 - eta, grad, hess))
    return jets


def _block_sizes(n1: int, n2: int, n_singular: int) -> tuple[int, int]:
    if n_singular == 0:
        return 0, 0
    if n1 % n_singular:
        raise ValueError(f"N1={n1} must be divisible by the {n_singular} singular vertices")
    if n2 % (2 * n_singular):
        raise ValueError(f"N2={n2} must be divisible by 2*{n_singular}")
    return n1 // n_singular, n2 // (2 * n_singular)


def exclusion_vectors_jet(points, geometry: Geometry, config: CutoffConfig, n1: int, n2: int):
    """Block-constant exclusion vectors Phi1 (length n1) and Phi2 (length n2).

    Phi1 repeats phi_n in blocks of n1/N_s; Phi2 is two copies of the
    analogous n2/2 block vector.  1D geometries return all-ones vectors.
    Returns two lists of ScalarJet, one per output component.
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    if geometry.dimension == 1 or geometry.n_singular == 0:
        one = ScalarJet.ones(n, d)
        return [one] * n1, [one] * n2
    b1, b2 = _block_sizes(n1, n2, geometry.n_singular)
    phi = _phi_jets(points, geometry, config)
    phi1 = [phi[k // b1] for k in range(n1)]
    half = [phi[k // b2] for k in range(n2 // 2)]
    return phi1, half + half


@dataclass
class CompositionFactors:
    """Composite cutoff scalar c_n per output with gradient and Laplacian.

    For output n the composed basis is c_n * raw_n, so
    grad = c grad_raw + raw grad_c and lap = c lap_raw + 2 grad_c.grad_raw
    + raw lap_c.
    """

    value: np.ndarray  # (J, N)
    gradient: np.ndarray  # (J, N, d)
    laplacian: np.ndarray  # (J, N)


def composition_factors(
    points, geometry: Geometry, config: CutoffConfig, n1: int, n2: int
) -> CompositionFactors:
    """Cutoff factors for all n1 + n2 outputs at interior points."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n, d = points.shape
    bjet = boundary_cutoff_jet(points, geometry)
    phi1, phi2 = exclusion_vectors_jet(points, geometry, config, n1, n2)

    def psi_or_one(lines):
        return jump_adf_jet(points, lines) if lines else ScalarJet.ones(n, d)

    if geometry.dimension == 1:
        psis = [psi_or_one(interface_lines(geometry))] * n2
    else:
        psi1 = psi_or_one(interface_lines(geometry, axis=0))
        psi2 = psi_or_one(interface_lines(geometry, axis=1))
        psis = [psi1] * (n2 // 2) + [psi2] * (n2 - n2 // 2)

    total = n1 + n2
    value = np.empty((n, total))
    grad = np.empty((n, total, d))
    lap = np.empty((n, total))
    for k in range(n1):
        jet = bjet * phi1[k]
        value[:, k] = jet.value
        grad[:, k] = jet.gradient
        lap[:, k] = jet.laplacian
    for m in range(n2):
        jet = bjet * psis[m] * phi2[m]
        value[:, n1 + m] = jet.value
        grad[:, n1 + m] = jet.gradient
        lap[:, n1 + m] = jet.laplacian
    return CompositionFactors(value, grad, lap)


@dataclass
class InterfaceTraceFactors:
    """Affine sensitivities of one-sided normal traces at interface points.

    trace_pm[k, n] = a_pm[k, n] * raw_value[k, n] + d_coef[k, n, :] . raw_grad[k, n, :]

    For outputs whose jump cutoff kinks on the interface the trace is
    +-(B * Phi2)(x) * raw, so a_plus = -a_minus and d_coef = 0; smooth
    outputs share both coefficients across sides.
    """

    a_minus: np.ndarray  # (J2, N)
    a_plus: np.ndarray  # (J2, N)
    d_coef: np.ndarray  # (J2, N, d)


def interface_trace_factors(
    points, interface_axes, geometry: Geometry, config: CutoffConfig, n1: int, n2: int
) -> InterfaceTraceFactors:
    """Trace coefficients at points lying on interfaces with the given axes."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    interface_axes = np.asarray(interface_axes, dtype=int)
    n, d = points.shape
    bjet = boundary_cutoff_jet(points, geometry)
    phi1, phi2 = exclusion_vectors_jet(points, geometry, config, n1, n2)
    total = n1 + n2
    a_minus = np.zeros((n, total))
    a_plus = np.zeros((n, total))
    d_coef = np.zeros((n, total, d))

    normals = np.zeros((n, d))
    if d == 1:
        normals[:, 0] = 1.0
    else:
        normals[np.arange(n), interface_axes] = 1.0

    # Smooth factor g = B * Phi (no psi): used by every column.
    for k in range(n1):
        jet = bjet * phi1[k]
        a_minus[:, k] = a_plus[:, k] = np.einsum("jd,jd->j", jet.gradient, normals)
        d_coef[:, k] = jet.value[:, None] * normals

    if geometry.dimension == 1:
        groups = [(list(range(n2)), None)]  # every v-column kinks on every interface
    else:
        groups = [
            (list(range(n2 // 2)), 0),
            (list(range(n2 // 2, n2)), 1),
        ]
    for cols, psi_axis in groups:
        if psi_axis is not None:
            lines = interface_lines(geometry, axis=psi_axis)
            on_own = (interface_axes == psi_axis) if lines else np.zeros(n, dtype=bool)
            psi = _safe_psi_jet(points, lines, on_own) if lines else ScalarJet.ones(n, d)
        for m in cols:
            g = bjet * phi2[m]
            if geometry.dimension == 1:
                # kink at every interface point: trace = +-g(x) * raw
                a_plus[:, n1 + m] = g.value
                a_minus[:, n1 + m] = -g.value
            else:
                smooth = ~on_own
                # own-line points: +-(B*Phi2)(x) * raw, gradient term vanishes with psi=0
                a_plus[on_own, n1 + m] = g.value[on_own]
                a_minus[on_own, n1 + m] = -g.value[on_own]
                if np.any(smooth):
                    jet = g * psi
                    gn = np.einsum("jd,jd->j", jet.gradient, normals)
                    a_plus[smooth, n1 + m] = gn[smooth]
                    a_minus[smooth, n1 + m] = gn[smooth]
                    d_coef[smooth, n1 + m] = jet.value[smooth, None] * normals[smooth]
    return InterfaceTraceFactors(a_minus, a_plus, d_coef)


def _safe_psi_jet(points, lines, on_own_mask) -> ScalarJet:
    """psi jet where own-line points (psi = 0, kink) are masked out."""
    pts = points.copy()
    if np.any(on_own_mask):
        pts[on_own_mask] += 1.0e6  # push off the line; entries unused downstream
    jet = jump_adf_jet(pts, lines)
    jet.value[on_own_mask] = 0.0
    jet.gradient[on_own_mask] = 0.0
    jet.hessian[on_own_mask] = 0.0
    return jet


def apply_cutoffs(raw_values, raw_grads, raw_hessians, points, geometry, config, n1, n2):
    """Compose raw network jets with all cutoffs (interior points).

    Inputs are (J, N), (J, N, d), (J, N, d, d); returns composed
    (values, gradients, laplacians).  Boundary points yield exact zeros.
    """
    raw_values = np.asarray(raw_values, dtype=float)
    if raw_values.shape[1] != n1 + n2:
        raise ValueError("raw output count does not match n1 + n2")
    fac = composition_factors(points, geometry, config, n1, n2)
    raw_lap = np.trace(raw_hessians, axis1=2, axis2=3)
    values = fac.value * raw_values
    grads = fac.value[:, :, None] * raw_grads + raw_values[:, :, None] * fac.gradient
    laps = (
        fac.value * raw_lap
        + 2.0 * np.einsum("jnd,jnd->jn", fac.gradient, raw_grads)
        + raw_values * fac.laplacian
    )
    return values, grads, laps
