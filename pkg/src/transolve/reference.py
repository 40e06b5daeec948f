"""Ground-truth generators and error metrics.

The 1D benchmark has the closed-form solution sin(5x)/p_i; 2D references
come from a bilinear FEM on a uniform grid whose lines conform to the
material interfaces.  Relative L2 errors (in percent) are evaluated on a
shared quadrature, optionally masking disks around the singular vertices
where the FEM reference is known to be unreliable.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import cg, splu

from .geometry import Geometry, subdomain_index_many
from .sampling import QuadratureSet

__all__ = [
    "RhsSpec",
    "FemSolution",
    "exact_1d",
    "fem_solve_2d",
    "relative_l2_errors",
]


@dataclass(frozen=True)
class RhsSpec:
    """Strong-form source of -div(p grad u) = rhs, affine in the local p.

    rhs(x) = p(x) * vertex-coupled factor + fixed part.  Built-ins:
    ``sin1d``  -> 25 sin(5x); ``corner2d`` -> p * sum_i sqrt(r_i)
    (cos(theta_i/2) - 3 sin(theta_i/2)) over the singular vertices, the
    square-root corner profile that excites the vertex singularities.
    """

    tag: str
    vertices: np.ndarray = field(default_factory=lambda: np.empty((0, 2)))

    @staticmethod
    def for_geometry(tag: str, geometry: Geometry) -> "RhsSpec":
        if tag == "sin1d":
            if geometry.dimension != 1:
                raise ValueError("sin1d requires a 1D geometry")
            return RhsSpec("sin1d")
        if tag == "corner2d":
            if geometry.dimension != 2:
                raise ValueError("corner2d requires a 2D geometry")
            return RhsSpec("corner2d", geometry.singular_vertices.copy())
        raise ValueError(f"unknown rhs tag {tag!r}")

    def factors(self, points: np.ndarray):
        """(p_factor, fixed) with rhs = p(x) * p_factor + fixed."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n = points.shape[0]
        if self.tag == "sin1d":
            return np.zeros(n), 25.0 * np.sin(5.0 * points[:, 0])
        total = np.zeros(n)
        for vx, vy in self.vertices:
            dx = points[:, 0] - vx
            dy = points[:, 1] - vy
            r = np.hypot(dx, dy)
            theta = np.mod(np.arctan2(dy, dx), 2 * np.pi)
            total += np.sqrt(r) * (np.cos(theta / 2) - 3 * np.sin(theta / 2))
        return total, np.zeros(n)

    def evaluate(self, points: np.ndarray, p_local: np.ndarray) -> np.ndarray:
        pf, fixed = self.factors(points)
        return p_local * pf + fixed


def exact_1d(geometry: Geometry, parameter, x):
    """Closed-form solution sin(5x)/p_i and its derivative on (0, pi)."""
    parameter = np.asarray(parameter, dtype=float)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    (a, b), = geometry.bounds
    if np.any(x < a) or np.any(x > b):
        raise ValueError("point outside the domain")
    sub = subdomain_index_many(geometry, x[:, None])
    p = parameter[sub]
    return np.sin(5 * x) / p, 5 * np.cos(5 * x) / p


@dataclass
class FemSolution:
    """Bilinear nodal field on a uniform grid with element-constant p."""

    geometry: Geometry
    n: int
    nodes_x: np.ndarray
    nodes_y: np.ndarray
    values: np.ndarray  # (n+1, n+1) nodal values, [ix, iy]
    element_p: np.ndarray  # (n, n)

    def evaluate(self, points: np.ndarray):
        """Solution values and fluxes p*grad(u) by bilinear interpolation."""
        points = np.atleast_2d(np.asarray(points, dtype=float))
        (a, b), (c, d) = self.geometry.bounds
        hx = (b - a) / self.n
        hy = (d - c) / self.n
        ix = np.clip(((points[:, 0] - a) / hx).astype(int), 0, self.n - 1)
        iy = np.clip(((points[:, 1] - c) / hy).astype(int), 0, self.n - 1)
        xi = (points[:, 0] - (a + ix * hx)) / hx
        yi = (points[:, 1] - (c + iy * hy)) / hy
        v00 = self.values[ix, iy]
        v10 = self.values[ix + 1, iy]
        v01 = self.values[ix, iy + 1]
        v11 = self.values[ix + 1, iy + 1]
        u = (
            v00 * (1 - xi) * (1 - yi)
            + v10 * xi * (1 - yi)
            + v01 * (1 - xi) * yi
            + v11 * xi * yi
        )
        du_dx = ((v10 - v00) * (1 - yi) + (v11 - v01) * yi) / hx
        du_dy = ((v01 - v00) * (1 - xi) + (v11 - v10) * xi) / hy
        p = self.element_p[ix, iy]
        flux = np.stack([p * du_dx, p * du_dy], axis=1)
        return u, flux


# reference-square bilinear stiffness for -div(grad u), nodes (SW, SE, NE, NW)
_K_REF = (1.0 / 6.0) * np.array(
    [
        [4, -1, -2, -1],
        [-1, 4, -1, -2],
        [-2, -1, 4, -1],
        [-1, -2, -1, 4],
    ]
)
_GAUSS2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


def fem_solve_2d(geometry: Geometry, parameter, rhs: RhsSpec, n_per_axis: int) -> FemSolution:
    """Standard bilinear FEM for -div(p grad u) = rhs with zero Dirichlet data.

    The uniform n x n grid must conform to the cuts; p is constant per
    element (taken at the element center), the load uses 2x2 Gauss points.
    The SPD system is solved by conjugate gradients to 1e-10 relative
    residual (with an LU fallback only if CG stagnates).
    """
    parameter = np.asarray(parameter, dtype=float)
    (a, b), (c, d) = geometry.bounds
    n = n_per_axis
    hx = (b - a) / n
    hy = (d - c) / n
    if abs(hx - hy) > 1e-12 * max(abs(hx), abs(hy)):
        raise ValueError("square elements required: bounds/n must give hx == hy")
    for cut in geometry.cuts_x:
        if abs(round((cut - a) / hx) * hx + a - cut) > 1e-9:
            raise ValueError(f"cut x={cut} does not align with the {n}x{n} grid")
    for cut in geometry.cuts_y:
        if abs(round((cut - c) / hy) * hy + c - cut) > 1e-9:
            raise ValueError(f"cut y={cut} does not align with the {n}x{n} grid")

    xs = a + hx * np.arange(n + 1)
    ys = c + hy * np.arange(n + 1)
    centers_x = a + hx * (np.arange(n) + 0.5)
    centers_y = c + hy * (np.arange(n) + 0.5)
    gx, gy = np.meshgrid(centers_x, centers_y, indexing="ij")
    centers = np.stack([gx.ravel(), gy.ravel()], axis=1)
    elem_sub = subdomain_index_many(geometry, centers).reshape(n, n)
    elem_p = parameter[elem_sub]

    def node_id(ix, iy):
        return ix * (n + 1) + iy

    # stiffness triplets, element by element (vectorized over elements)
    ex, ey = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    ex = ex.ravel()
    ey = ey.ravel()
    conn = np.stack(
        [
            node_id(ex, ey),
            node_id(ex + 1, ey),
            node_id(ex + 1, ey + 1),
            node_id(ex, ey + 1),
        ],
        axis=1,
    )
    pe = elem_p.ravel()
    ke = pe[:, None, None] * _K_REF[None, :, :]
    rows = np.repeat(conn, 4, axis=1).ravel()
    cols = np.tile(conn, (1, 4)).ravel()
    ndof = (n + 1) * (n + 1)
    k = sparse.coo_matrix((ke.ravel(), (rows, cols)), shape=(ndof, ndof)).tocsr()

    # load vector: 2x2 Gauss per element
    f = np.zeros(ndof)
    jac = hx * hy / 4.0
    for gxi in _GAUSS2:
        for gyi in _GAUSS2:
            shapes = np.array(
                [
                    (1 - gxi) * (1 - gyi),
                    (1 + gxi) * (1 - gyi),
                    (1 + gxi) * (1 + gyi),
                    (1 - gxi) * (1 + gyi),
                ]
            ) / 4.0
            px = a + (ex + 0.5 * (1 + gxi)) * hx
            py = c + (ey + 0.5 * (1 + gyi)) * hy
            vals = rhs.evaluate(np.stack([px, py], axis=1), pe)
            np.add.at(f, conn.ravel(), (jac * vals[:, None] * shapes[None, :]).ravel())

    # homogeneous Dirichlet: keep interior nodes only
    ix_all, iy_all = np.meshgrid(np.arange(n + 1), np.arange(n + 1), indexing="ij")
    interior = ((ix_all > 0) & (ix_all < n) & (iy_all > 0) & (iy_all < n)).ravel()
    idx = np.where(interior)[0]
    k_ii = k[idx][:, idx].tocsr()
    f_i = f[idx]

    bnorm = np.linalg.norm(f_i)
    diag = k_ii.diagonal()
    precond = sparse.diags(1.0 / diag)
    u_i, info = cg(k_ii, f_i, rtol=1e-12, atol=0.0, maxiter=20 * idx.size, M=precond)
    if info != 0 or np.linalg.norm(k_ii @ u_i - f_i) > 1e-10 * max(bnorm, 1e-300):
        u_i = splu(k_ii.tocsc()).solve(f_i)
        if np.linalg.norm(k_ii @ u_i - f_i) > 1e-10 * max(bnorm, 1e-300):
            raise RuntimeError("FEM linear solver failed to converge")

    u = np.zeros(ndof)
    u[idx] = u_i
    return FemSolution(geometry, n, xs, ys, u.reshape(n + 1, n + 1), elem_p)


def relative_l2_errors(
    approx_values,
    approx_flux,
    ref_values,
    ref_flux,
    quadrature: QuadratureSet,
    geometry: Geometry | None = None,
    mask_radius: float = 0.0,
):
    """Relative L2 errors in percent for the solution and flux fields.

    Fields must be sampled on the quadrature's interior points.  With a
    mask radius and a 2D geometry, points within that distance of any
    singular vertex are excluded from both norms.
    """
    w = quadrature.interior_weights.copy()
    if mask_radius > 0 and geometry is not None and geometry.n_singular:
        pts = quadrature.interior_points
        for v in geometry.singular_vertices:
            w[np.hypot(pts[:, 0] - v[0], pts[:, 1] - v[1]) < mask_radius] = 0.0
    au = np.asarray(approx_values, dtype=float)
    ru = np.asarray(ref_values, dtype=float)
    sol_ref = np.sum(w * ru**2)
    if sol_ref <= 0:
        raise ValueError("reference solution has zero norm on the quadrature")
    sol_err = np.sum(w * (au - ru) ** 2)
    af = np.asarray(approx_flux, dtype=float)
    rf = np.asarray(ref_flux, dtype=float)
    if af.shape != rf.shape:
        raise ValueError("flux field shapes disagree")
    if af.ndim == 1:  # scalar 1D flux
        af = af[:, None]
        rf = rf[:, None]
    flux_ref = np.sum(w * np.sum(rf**2, axis=-1))
    if flux_ref <= 0:
        raise ValueError("reference flux has zero norm on the quadrature")
    flux_err = np.sum(w * np.sum((af - rf) ** 2, axis=-1))
    return (
        100.0 * np.sqrt(sol_err / sol_ref),
        100.0 * np.sqrt(flux_err / flux_ref),
    )
