"""Periodic Sturm-Liouville eigenproblem around a singular vertex.

The angular coefficient p(theta) is piecewise constant on the four
quarter-plane sectors.  On the reference coordinate xi in [0, 4] (one unit
per sector, d theta/d xi = pi/2) the space is spanned by sixteen functions:
per element three internal quartic bubbles in the local coordinate
u = xi - e,

    u(1-u),   5 u(1-u)(u-1/2),   20 u(1-u)(u-1/2)^2,

plus four C0 hat functions (1/4) max(0, 1-|xi-e|) that wrap periodically.
Stiffness/mass assembly uses 5-point Gauss-Legendre per element, exact for
the degree-8 integrands.  The generalized problem G rho = lambda B rho is
reduced to a standard symmetric one through B^(-1/2) and solved by cyclic
Jacobi rotations; singular exponents are the square roots of the
generalized eigenvalues, selected in (0, 1).

A semi-analytic transfer-matrix oracle (piecewise trigonometric modes
propagated sector to sector, periodicity enforced as a root problem) is
included for validation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = [
    "EigenSystem",
    "EigenPair",
    "basis_matrix",
    "assemble_eigensystem",
    "jacobi_eigh",
    "solve_eigenpairs",
    "select_singular",
    "angular_eval",
    "semi_analytic_exponents",
]

N_ELEMENTS = 4
N_BASIS = 16
XI_PER_THETA = 2.0 / np.pi  # d xi / d theta
SECTOR = np.pi / 2

try:  # compiled rotation kernel; the numpy fallback is ~100x slower
    import numba as _numba
except ImportError:  # pragma: no cover
    _numba = None


def _bubble(u, k):
    w = u * (1 - u)
    if k == 0:
        return w
    if k == 1:
        return 5 * w * (u - 0.5)
    return 20 * w * (u - 0.5) ** 2


def _bubble_deriv(u, k):
    if k == 0:
        return 1 - 2 * u
    if k == 1:
        return 5 * ((1 - 2 * u) * (u - 0.5) + u * (1 - u))
    return 20 * ((1 - 2 * u) * (u - 0.5) ** 2 + 2 * u * (1 - u) * (u - 0.5))


def basis_matrix(xi) -> tuple[np.ndarray, np.ndarray]:
    """Values and xi-derivatives of all 16 basis functions at given xi.

    Bubbles are element-local; hats are tents of height 1/4 centered on the
    element nodes xi = 0..3 with periodic wrap at xi in {0, 4}.
    """
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    xi = np.mod(xi, 4.0)
    n = xi.size
    vals = np.zeros((n, N_BASIS))
    ders = np.zeros((n, N_BASIS))
    elem = np.minimum(xi.astype(int), N_ELEMENTS - 1)
    u = xi - elem
    for e in range(N_ELEMENTS):
        mask = elem == e
        if not np.any(mask):
            continue
        ue = u[mask]
        for k in range(3):
            vals[mask, 3 * e + k] = _bubble(ue, k)
            ders[mask, 3 * e + k] = _bubble_deriv(ue, k)
    for e in range(N_ELEMENTS):
        dist = np.abs(xi - e)
        dist = np.minimum(dist, 4.0 - dist)  # periodic wrap
        inside = dist < 1.0
        vals[inside, 12 + e] = 0.25 * (1.0 - dist[inside])
        # slope sign: negative moving away from the center, wrapped
        diff = np.mod(xi - e + 2.0, 4.0) - 2.0
        ders[inside, 12 + e] = -0.25 * np.sign(diff[inside])
    return vals, ders


@dataclass
class EigenSystem:
    """Assembled 16x16 stiffness and mass matrices with their angular trace."""

    stiffness: np.ndarray
    mass: np.ndarray
    trace: np.ndarray  # p per quarter sector, length 4


_GL5_NODES, _GL5_WEIGHTS = np.polynomial.legendre.leggauss(5)


def assemble_eigensystem(angular_trace) -> EigenSystem:
    """Stiffness/mass assembly from the 4-sector trace via 5-point Gauss.

    accepts either the sector list produced by geometry.angular_trace or a
    plain length-4 array of p values.
    """
    if isinstance(angular_trace, (list, tuple)) and angular_trace and isinstance(
        angular_trace[0], (tuple, list)
    ):
        p_sector = np.array([s[2] for s in angular_trace], dtype=float)
    else:
        p_sector = np.asarray(angular_trace, dtype=float)
    if p_sector.shape != (4,):
        raise ValueError("angular trace must provide 4 sector values")
    if np.any(p_sector <= 0):
        raise ValueError("angular trace must be positive")

    g = np.zeros((N_BASIS, N_BASIS))
    b = np.zeros((N_BASIS, N_BASIS))
    for e in range(N_ELEMENTS):
        xi = e + 0.5 * (_GL5_NODES + 1.0)
        w = 0.5 * _GL5_WEIGHTS
        vals, ders = basis_matrix(xi)
        # measures: d theta = (pi/2) d xi;  d/d theta = (2/pi) d/d xi
        b += p_sector[e] * SECTOR * np.einsum("q,qi,qj->ij", w, vals, vals)
        g += p_sector[e] * (XI_PER_THETA**2) * SECTOR * np.einsum("q,qi,qj->ij", w, ders, ders)
    return EigenSystem(g, b, p_sector)


def _jacobi_sweeps(a, v, tol, max_sweeps, scale):
    """Cyclic Jacobi rotations in place; returns True once converged."""
    n = a.shape[0]
    thresh = tol * scale / n
    for _ in range(max_sweeps):
        off = 0.0
        for i in range(n - 1):
            for j in range(i + 1, n):
                off += 2.0 * a[i, j] * a[i, j]
        if np.sqrt(off) <= tol * scale:
            return True
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= thresh:
                    continue
                theta = 0.5 * (a[q, q] - a[p, p]) / apq
                if theta == 0.0:
                    t = 1.0
                else:
                    t = np.sign(theta) / (abs(theta) + np.sqrt(theta * theta + 1.0))
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                for k in range(n):
                    akp = a[k, p]
                    akq = a[k, q]
                    a[k, p] = c * akp - s * akq
                    a[k, q] = s * akp + c * akq
                for k in range(n):
                    apk = a[p, k]
                    aqk = a[q, k]
                    a[p, k] = c * apk - s * aqk
                    a[q, k] = s * apk + c * aqk
                for k in range(n):
                    vkp = v[k, p]
                    vkq = v[k, q]
                    v[k, p] = c * vkp - s * vkq
                    v[k, q] = s * vkp + c * vkq
    off = 0.0
    for i in range(n - 1):
        for j in range(i + 1, n):
            off += 2.0 * a[i, j] * a[i, j]
    return np.sqrt(off) <= tol * scale


if _numba is not None:
    _jacobi_sweeps = _numba.njit(cache=True)(_jacobi_sweeps)


def jacobi_eigh(matrix: np.ndarray, tol: float = 1e-14, max_sweeps: int = 50):
    """Cyclic Jacobi diagonalization of a symmetric matrix.

    Returns eigenvalues (ascending) and the orthogonal eigenvector matrix.
    Raises if the off-diagonal Frobenius norm has not dropped below
    tol * ||A||_F within the sweep budget.  The default tolerance is near
    machine precision; the inverse-square-root sandwich needs it so that
    B-orthonormality of the recovered eigenvectors survives to 1e-10.
    """
    a = np.array(matrix, dtype=float)
    n = a.shape[0]
    if a.shape != (n, n) or not np.allclose(a, a.T, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ValueError("matrix must be square symmetric")
    v = np.eye(n)
    scale = max(np.linalg.norm(a), 1e-300)
    if not _jacobi_sweeps(a, v, tol, max_sweeps, scale):
        raise RuntimeError("Jacobi sweep budget exhausted before convergence")
    order = np.argsort(np.diag(a))
    return np.diag(a)[order], v[:, order]


@dataclass
class EigenPair:
    """One angular mode: exponent, B-orthonormal coefficients, unit-L2 scale.

    ``rho`` diagonalizes the generalized problem with rho^T B^p rho = 1;
    ``mu_scale`` rescales the reconstructed angular function to unit L2 norm
    on (0, 2pi), which is the normalization used by the singular basis.
    ``residual`` is the relative residual of the generalized eigenproblem.
    """

    exponent: float
    eigenvalue: float
    rho: np.ndarray
    mu_scale: float
    residual: float


_MASS_UNIT = None


def _unit_mass() -> np.ndarray:
    global _MASS_UNIT
    if _MASS_UNIT is None:
        _MASS_UNIT = assemble_eigensystem(np.ones(4)).mass
    return _MASS_UNIT


def solve_eigenpairs(system: EigenSystem) -> list[EigenPair]:
    """All eigenpairs of G rho = lambda B rho, sorted by exponent.

    Reduction: eigendecompose B, form M = B^(-1/2) G B^(-1/2), Jacobi-solve
    M, map eigenvectors back.  Exponents are sqrt(max(lambda, 0)).
    """
    g, b = system.stiffness, system.mass
    beigs, bvecs = jacobi_eigh(b)
    if np.min(beigs) <= 0:
        raise ValueError("mass matrix is not positive definite")
    b_inv_half = bvecs @ np.diag(beigs**-0.5) @ bvecs.T
    m = b_inv_half @ g @ b_inv_half
    m = 0.5 * (m + m.T)
    lams, y = jacobi_eigh(m)
    mass1 = _unit_mass()
    pairs = []
    gnorm = np.linalg.norm(g)
    bnorm = np.linalg.norm(b)
    for k in range(lams.size):
        lam = float(lams[k])
        rho = b_inv_half @ y[:, k]
        res = np.linalg.norm(g @ rho - lam * (b @ rho))
        res /= max(np.linalg.norm(g @ rho), abs(lam) * bnorm * np.linalg.norm(rho), gnorm * 1e-14)
        lam = max(lam, 0.0)
        mu_sq = float(rho @ mass1 @ rho)
        pairs.append(
            EigenPair(
                exponent=float(np.sqrt(lam)),
                eigenvalue=lam,
                rho=rho,
                mu_scale=1.0 / np.sqrt(mu_sq),
                residual=float(res),
            )
        )
    pairs.sort(key=lambda pr: pr.exponent)
    return pairs


def select_singular(pairs: list[EigenPair], n_cap: int, band: float = 1e-6) -> list[EigenPair]:
    """At most n_cap smallest-exponent pairs with exponent strictly in (0, 1).

    Guard bands keep out the constant mode (exponent ~ 0 up to FE noise)
    and the regular modes whose exponent is 1 up to discretization error.
    """
    picked = [p for p in pairs if band < p.exponent < 1.0 - band]
    return picked[:n_cap]


def angular_eval(pair: EigenPair, theta):
    """Unit-L2 angular function mu(theta) and its one-sided derivative."""
    theta = np.asarray(theta, dtype=float)
    xi = np.mod(theta, 2 * np.pi) * XI_PER_THETA
    vals, ders = basis_matrix(xi)
    mu = pair.mu_scale * (vals @ pair.rho)
    dmu = pair.mu_scale * (ders @ pair.rho) * XI_PER_THETA
    return mu.reshape(theta.shape), dmu.reshape(theta.shape)


def _transfer_matrix(lam: float, p_sector: np.ndarray) -> np.ndarray:
    """Propagate (mu, p mu') across the four sectors at trial exponent lam."""
    t = np.eye(2)
    c, s = np.cos(lam * SECTOR), np.sin(lam * SECTOR)
    for p in p_sector:
        tk = np.array([[c, s / (lam * p)], [-p * lam * s, c]])
        t = tk @ t
    return t


def semi_analytic_exponents(angular_trace, lam_max=2.0, step=1e-3, tol=1e-12):
    """Exponents of the sector problem by transfer-matrix root finding.

    On each constant sector modes are A cos(lam theta) + B sin(lam theta);
    periodicity of (mu, p mu') requires det(T(lam) - I) = 0, i.e.
    tr T = 2 since det T = 1.  Roots of f = tr T - 2 on (0, lam_max] are
    located by sign scanning plus bisection; tangential (double) roots,
    where f touches zero from below, are refined by ternary maximization.
    """
    if isinstance(angular_trace, (list, tuple)) and angular_trace and isinstance(
        angular_trace[0], (tuple, list)
    ):
        p_sector = np.array([s[2] for s in angular_trace], dtype=float)
    else:
        p_sector = np.asarray(angular_trace, dtype=float)

    def f(lam):
        return np.trace(_transfer_matrix(lam, p_sector)) - 2.0

    # scan a little past lam_max so tangential roots at the edge are seen
    grid = np.arange(step, lam_max + 3 * step, step)
    fv = np.array([f(x) for x in grid])
    roots = []

    def add_root(x):
        if x <= lam_max + step and not any(abs(x - r) < 1e-9 for r in roots):
            roots.append(x)

    for i in range(len(grid) - 1):
        a, b = grid[i], grid[i + 1]
        fa, fb = fv[i], fv[i + 1]
        if fa == 0.0:
            add_root(a)
            continue
        if fa * fb < 0:
            while b - a > tol:
                m = 0.5 * (a + b)
                fm = f(m)
                if fa * fm <= 0:
                    b = m
                else:
                    a, fa = m, fm
            add_root(0.5 * (a + b))
        elif 0 < i and fv[i] < 0 and fv[i] > fv[i - 1] and fv[i] >= fb:
            # negative local max: candidate tangential (double) root
            a, b = grid[i - 1], grid[i + 1]
            while b - a > tol:
                m1 = a + (b - a) / 3
                m2 = b - (b - a) / 3
                if f(m1) < f(m2):
                    a = m1
                else:
                    b = m2
            x = 0.5 * (a + b)
            if abs(f(x)) <= 1e-8:
                add_root(x)
    return sorted(roots)
