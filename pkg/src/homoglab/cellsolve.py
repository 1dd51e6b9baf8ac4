"""Periodic cell problems on the unit cell and tabulated effective laws.

Discretization
--------------
In 1-d the corrector potential lives on the nodes ``j/M`` and its gradient on
the cell centers ``(j + 1/2)/M``; the gradient space ``W`` is the set of
zero-mean center fields and ``Z = {0}``.

In 2-d a staggered layout is used: the scalar potential sits on vertices, the
first gradient component on ``((i+1/2)/M, j/M)`` and the second on
``(i/M, (j+1/2)/M)``.  Divergence-free fields are curls of a stream function
stored on cell centers, so the discrete gradient and curl images are
orthogonal by summation by parts, with no rounding beyond the arithmetic of
the entries themselves.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import PchipInterpolator
from scipy.optimize import linprog
from scipy.sparse.linalg import spsolve

from .convexcore import Potential, conjugate
from .errors import (ConfigError, ConsistencyError, ConvergenceError, DomainError,
                     MonotonicityError, SchemaError)
from .fitz import MonotoneGraph, RepresentativeFn
from .presets import ConjugateMaterial, Material, PowerLaw, parse_material

LAW_SCHEMA = "homoglab-law/1"


@dataclass(frozen=True)
class CellGrid:
    """Uniform periodic grid on ``Y = (0, 1)^N`` with ``M`` nodes per side."""

    N: int
    M: int

    def __post_init__(self):
        if self.N not in (1, 2):
            raise ConfigError("cell grids are 1-d or 2-d")
        if self.M < 2:
            raise ConfigError("cell grids need at least two nodes per side")

    @property
    def nodes(self):
        j = np.arange(self.M) / self.M
        if self.N == 1:
            return j
        return np.stack(np.meshgrid(j, j, indexing="ij"), axis=-1).reshape(-1, 2)

    @property
    def centers(self):
        """1-d gradient sample points ``(j + 1/2)/M``."""
        return (np.arange(self.M) + 0.5) / self.M

    @property
    def n_points(self):
        return self.M ** self.N

    @property
    def weights(self):
        """Quadrature weights of one field component; they sum to 1."""
        return np.full(self.n_points, 1.0 / self.n_points)

    def face_coords(self):
        """Coordinates of the gradient samples, one array per component."""
        if self.N == 1:
            return (self.centers,)
        i = np.arange(self.M)
        I, J = np.meshgrid(i, i, indexing="ij")
        f1 = np.stack([(I + 0.5) / self.M, J / self.M], axis=-1).reshape(-1, 2)
        f2 = np.stack([I / self.M, (J + 0.5) / self.M], axis=-1).reshape(-1, 2)
        return f1, f2


@dataclass(frozen=True, eq=False)
class WZBases:
    """Discrete gradient operator ``D`` and curl operator ``C``.

    ``W = range(D)`` and ``Z = range(C)``; dropping the first column of each
    operator leaves a basis (the kernels are the constants).
    """

    grid: CellGrid
    D: sp.csr_matrix
    C: sp.csr_matrix

    @property
    def dim_W(self):
        return self.grid.n_points - 1

    @property
    def dim_Z(self):
        return 0 if self.grid.N == 1 else self.grid.n_points - 1

    def W_basis(self):
        return self.D[:, 1:]

    def Z_basis(self):
        return self.C[:, 1:] if self.grid.N == 2 else self.C

    def inner(self, a, b):
        """Quadrature inner product of stacked component fields."""
        return (a.T @ b) / self.grid.n_points

    def cross_products(self):
        """Matrix of all inner products between W and Z basis elements."""
        Zb = self.Z_basis()
        if Zb.shape[1] == 0:
            return np.zeros((self.dim_W, 0))
        return self.inner(self.W_basis(), Zb)

    def max_cross_product(self):
        X = self.cross_products()
        if sp.issparse(X):
            return float(abs(X).max()) if X.nnz else 0.0
        return float(np.max(np.abs(X))) if X.size else 0.0


def _shift(M, offset):
    """Periodic shift ``(S x)_i = x_{i + offset}`` on ``M`` points."""
    return sp.diags([1.0, 1.0], [offset, offset - np.sign(offset) * M], shape=(M, M)) \
        if offset else sp.identity(M)


def build_wz_bases(grid: CellGrid) -> WZBases:
    M = grid.M
    I = sp.identity(M, format="csr")
    fwd = M * (_shift(M, 1) - I)   # (i) -> M (x_{i+1} - x_i)
    bwd = M * (I - _shift(M, -1))  # (i) -> M (x_i - x_{i-1})
    if grid.N == 1:
        return WZBases(grid, sp.csr_matrix(fwd), sp.csr_matrix((M, 0)))
    # index k = i * M + j with i along y1
    D = sp.vstack([sp.kron(fwd, I), sp.kron(I, fwd)]).tocsr()
    C = sp.vstack([sp.kron(I, bwd), -sp.kron(bwd, I)]).tocsr()
    return WZBases(grid, D, C)


# -- cell solutions --------------------------------------------------------------

@dataclass
class CellSolution:
    """Minimizer of a primal cell problem at one macroscopic gradient."""

    xi: object
    value: float
    v: np.ndarray
    flux: object
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)

    def potential(self, grid: CellGrid):
        """Zero-mean nodal corrector whose discrete gradient is ``v`` (1-d)."""
        chi = np.concatenate([[0.0], np.cumsum(self.v[:-1])]) / grid.M
        return chi - chi.mean()


def _material(pot):
    if isinstance(pot, Material):
        return pot
    if isinstance(pot, Potential):
        if pot.material is None:
            raise DomainError("cell problems need a y-dependent (analytic) potential family")
        return pot.material
    return parse_material(pot)


def _cell_energy(mat, g, y, mu):
    if mu is None:
        val = mat.value(g, y)
        d1 = mat.slope(g, y)
        d2 = mat.curvature(g, y)
        return val, d1, d2
    return mat.moreau(g, y, mu)


def _newton_1d(mat, xi, y, v, mu, tol, max_iter, history):
    """Damped KKT Newton for ``min mean f(xi + v_j, y_j)`` subject to ``sum v = 0``."""
    M = y.size
    val, d1, d2 = _cell_energy(mat, xi + v, y, mu)
    F = float(np.mean(val))
    for it in range(max_iter):
        res = float(np.max(np.abs(d1 - np.mean(d1))))
        history.append(res)
        scale = 1.0 + float(np.max(np.abs(d1)))
        if res <= tol * scale:
            return v, it, res
        H = np.where(np.isfinite(d2), d2, 0.0)
        H = np.maximum(H, 1e-12 * max(float(H.max()), 1.0))
        # Schur complement of [[H, 1], [1^T, 0]]
        lam = -np.sum(d1 / H) / np.sum(1.0 / H)
        d = -(d1 + lam) / H
        d -= d.mean()
        slope = float(np.dot(d1, d)) / M
        t = 1.0
        while True:
            vn = v + t * d
            valn, d1n, d2n = _cell_energy(mat, xi + vn, y, mu)
            Fn = float(np.mean(valn))
            if Fn <= F + 1e-4 * t * slope or t < 1e-12:
                break
            # near the optimum the energy is flat to rounding; accept steps
            # that reduce stationarity without raising the energy noticeably
            resn = float(np.max(np.abs(d1n - np.mean(d1n))))
            if Fn <= F + 1e-14 * (1.0 + abs(F)) and resn < res:
                break
            t *= 0.5
        if t < 1e-12 and Fn > F:
            break
        v, val, d1, d2, F = vn, valn, d1n, d2n, Fn
    res = float(np.max(np.abs(d1 - np.mean(d1))))
    scale = 1.0 + float(np.max(np.abs(d1)))
    if res <= tol * scale:
        return v, max_iter, res
    raise ConvergenceError(f"cell Newton stalled at xi={xi!r} with residual {res!r}", history)


def solve_cell_primal(pot, xi, grid: CellGrid, tol=1e-11, max_iter=200,
                      mu0=1e-2, mu_min=1e-9) -> CellSolution:
    """Minimize ``mean_Y phi(xi + v(y), y)`` over discrete gradient fields ``v``.

    Parameters
    ----------
    pot : Material, Potential or preset string
        The y-dependent convex family.
    xi : float or array of shape (2,)
        Macroscopic gradient.
    grid : CellGrid
    tol : float
        Stationarity tolerance relative to the flux magnitude.

    Returns
    -------
    CellSolution
        ``value`` is the effective potential at ``xi``, ``v`` the corrector
        gradient at the gradient sample points and ``flux`` the cell-averaged
        flux, which lies in the effective graph at ``xi``.
    """
    mat = _material(pot)
    if grid.N == 2:
        return _solve_cell_primal_2d(mat, np.asarray(xi, dtype=float), grid)
    xi = float(xi)
    y = grid.centers
    history: list = []
    v = np.zeros(grid.M)
    mu_last = None
    if mat.homogeneous:
        v_fin, iters, res = v, 0, 0.0
    elif mat.smooth:
        v_fin, iters, res = _newton_1d(mat, xi, y, v, None, tol, max_iter, history)
    else:
        # smoothing continuation for kinked families, then an unsmoothed polish
        mu, iters = mu0, 0
        while mu >= mu_min:
            v, it, res = _newton_1d(mat, xi, y, v, mu, tol, max_iter, history)
            iters += it
            mu_last = mu
            mu *= 0.5
        v_fin = v
        g = xi + v
        if not any(np.any(np.abs(g - c) < 1e-12) for c in mat.kinks):
            try:
                v_fin, it, res = _newton_1d(mat, xi, y, v, None, tol, max_iter, history)
                iters += it
                mu_last = None
            except ConvergenceError:
                v_fin = v
    g = xi + v_fin
    value = float(np.mean(mat.value(g, y)))
    lo, hi = mat.slope_interval(g, y)
    # the optimality multiplier is a common flux value; select it inside
    # every pointwise subdifferential before averaging
    lam = float(np.mean(_cell_energy(mat, g, y, mu_last)[1]))
    flux = float(np.mean(np.clip(lam, lo, hi)))
    return CellSolution(xi, value, v_fin, flux, iters, res, history)


def _coeff_2d(mat, grid):
    if not isinstance(mat, PowerLaw) or mat.p != 2.0:
        raise ConfigError("2-d cell problems are supported for quadratic (linear-flux) presets only")
    f1, f2 = grid.face_coords()
    # layers are normal to y1: the coefficient depends on the first coordinate
    return np.concatenate([mat.coeff(f1[:, 0]), mat.coeff(f2[:, 0])])


def _solve_cell_primal_2d(mat, xi, grid):
    bases = build_wz_bases(grid)
    a = _coeff_2d(mat, grid)
    n = grid.n_points
    e = np.concatenate([np.full(n, xi[0]), np.full(n, xi[1])])
    D = bases.D[:, 1:]
    A = sp.diags(a)
    K = (D.T @ A @ D).tocsc()
    s = spsolve(K, -(D.T @ (a * e)))
    v = D @ s
    g = e + v
    value = float(np.sum(a * g * g) / (2.0 * n))
    flux = np.array([np.mean(a[:n] * g[:n]), np.mean(a[n:] * g[n:])])
    res = float(np.max(np.abs(D.T @ (a * g)))) / n
    return CellSolution(xi, value, v, flux, 1, res)


def solve_cell_dual(dual_pot, eta, grid: CellGrid):
    """``psi0(eta) = min over Z of mean_Y phi*(eta + w(y), y)``.

    ``dual_pot`` is either the conjugate family or the primal family (its
    conjugate is then used).  In 1-d no minimization is needed.  Returns the
    value and, for 1-d, the clipped flag of ``eta``.
    """
    mat = _material(dual_pot)
    if isinstance(mat, ConjugateMaterial):
        mat = mat.base
    if grid.N == 1:
        val, clip = mat.conj(np.full(grid.M, float(eta)), grid.centers)
        return float(np.mean(val)), bool(np.any(clip))
    a = _coeff_2d(mat, grid)
    bases = build_wz_bases(grid)
    n = grid.n_points
    eta = np.asarray(eta, dtype=float)
    e = np.concatenate([np.full(n, eta[0]), np.full(n, eta[1])])
    C = bases.C[:, 1:]
    Ainv = sp.diags(1.0 / a)
    K = (C.T @ Ainv @ C).tocsc()
    s = spsolve(K, -(C.T @ (e / a)))
    g = e + C @ s
    return float(np.sum(g * g / a) / (2.0 * n)), False


def effective_tensor(pot, grid: CellGrid):
    """Effective 2x2 tensor of a linear-flux family (columns = fluxes of unit gradients)."""
    cols = [solve_cell_primal(pot, e, grid).flux for e in np.eye(2)]
    return np.column_stack(cols)


# -- F0 ---------------------------------------------------------------------

def f0_eval(rep, xi, eta, grid: CellGrid, pot=None, tol=1e-8):
    """Homogenized representative ``F0(xi, eta)``.

    ``rep`` is either ``"fenchel"`` (requires ``pot``; the minimizations over
    W and Z then separate and ``F0 = phi0 + psi0``) or a mapping
    ``phase -> RepresentativeFn`` of Fitzpatrick representatives (1-d), in
    which case the joint minimization is solved as a linear program.
    """
    if isinstance(rep, str) and rep == "fenchel":
        if pot is None:
            raise ValueError("the Fenchel representative needs the potential family")
        val = solve_cell_primal(pot, xi, grid).value + solve_cell_dual(pot, eta, grid)[0]
    else:
        if grid.N != 1:
            raise ConfigError("graph representatives are supported on 1-d cells only")
        val = _f0_lp(rep, float(xi), float(eta), grid, pot)
    pair = float(np.dot(np.atleast_1d(xi), np.atleast_1d(eta)))
    if val < pair - tol * (1.0 + abs(pair)):
        raise ConsistencyError(f"F0({xi!r}, {eta!r}) = {val!r} is below the pairing {pair!r}")
    return val


def _f0_lp(reps, xi, eta, grid, pot):
    """LP for ``min sum_p theta_p t_p`` with ``t_p >= f_p(xi + v_p, eta)``.

    Within a phase the integrand does not depend on y, so by convexity the
    optimal corrector is constant per phase.
    """
    y = grid.centers
    phases = _material(pot).phases(y) if pot is not None else np.zeros(y.size, dtype=int)
    labels, counts = np.unique(phases, return_counts=True)
    theta = counts / counts.sum()
    P = labels.size
    c = np.concatenate([np.zeros(P), theta])
    A_ub, b_ub = [], []
    for k, lab in enumerate(labels):
        r = reps[int(lab)] if isinstance(reps, dict) else reps
        g = r.graph
        if g is None or g.dim != 1:
            raise ConfigError("LP evaluation of F0 needs 1-d Fitzpatrick representatives")
        # t_k >= eta V_i - W_i (V_i - xi - v_k)  <=>  -W_i v_k - t_k <= -eta V_i + W_i V_i - W_i xi
        rows = np.zeros((len(g), 2 * P))
        rows[:, k] = -g.w
        rows[:, P + k] = -1.0
        A_ub.append(rows)
        b_ub.append(-eta * g.v + g.w * g.v - g.w * xi)
    A_eq = np.concatenate([theta, np.zeros(P)])[None, :]
    res = linprog(c, A_ub=np.vstack(A_ub), b_ub=np.concatenate(b_ub), A_eq=A_eq, b_eq=[0.0],
                  bounds=[(None, None)] * (2 * P), method="highs")
    if res.status != 0:
        raise ConvergenceError(f"F0 linear program failed: {res.message}")
    return float(res.fun)


def phase_representatives(pot, v):
    """Fitzpatrick representatives of the subdifferential per material phase."""
    mat = _material(pot)
    y = np.linspace(0.0, 1.0, 4097)[:-1]
    reps = {}
    for lab in np.unique(mat.phases(y)):
        y0 = float(y[mat.phases(y) == lab][0])
        reps[int(lab)] = RepresentativeFn.fitzpatrick(MonotoneGraph.from_material(mat, v, y0))
    return reps


# -- laminate oracle -----------------------------------------------------------

class LaminateCoefficients(NamedTuple):
    across: float
    along: float


def laminate_oracle(a1, a2, theta, p=2.0) -> LaminateCoefficients:
    """Closed-form effective coefficients of a two-phase layered medium.

    Across the layers the flux is constant, giving the generalized harmonic
    mean ``(theta a1^{-1/(p-1)} + (1-theta) a2^{-1/(p-1)})^{-(p-1)}``; along
    the layers the gradient is constant, giving the arithmetic mean.
    """
    if a1 <= 0 or a2 <= 0:
        raise ConfigError("laminate coefficients must be positive")
    if not 0.0 < theta < 1.0:
        raise ConfigError("layer fraction must lie in (0, 1)")
    if p <= 1.0:
        raise ConfigError("growth exponent must exceed 1")
    e = 1.0 / (p - 1.0)
    across = (theta * a1 ** -e + (1.0 - theta) * a2 ** -e) ** -(p - 1.0)
    along = theta * a1 + (1.0 - theta) * a2
    return LaminateCoefficients(float(across), float(along))


# -- effective laws ------------------------------------------------------------

@dataclass(eq=False)
class EffectiveLaw:
    """Tabulated effective potential, flux, dual potential and (optionally) F0.

    For 2-d cells the tables hold the restriction to the ``e1`` direction and
    the full tensor is kept in ``tensor``.
    """

    xi: np.ndarray
    phi0: np.ndarray
    gamma0: np.ndarray
    eta: np.ndarray
    psi0: np.ndarray
    f0: Optional[np.ndarray] = None
    correctors: Optional[np.ndarray] = None
    tensor: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def M(self):
        return int(self.meta.get("M", 0))

    def check(self, tol=1e-9):
        """Convexity of phi0 and monotonicity of gamma0 on the table."""
        Potential(self.xi, self.phi0, name="phi0").check_convex(tol)
        dg = np.diff(self.gamma0)
        scale = tol * (1.0 + np.abs(self.gamma0[1:]))
        if np.any(dg < -scale):
            i = int(np.argmax(dg < -scale))
            raise MonotonicityError(f"gamma0 decreases between xi={self.xi[i]!r} and {self.xi[i + 1]!r}",
                                    pair=(i, i + 1))

    def coefficient(self):
        """Least-squares ``c`` in ``gamma0 = c |xi|^(p-1) sgn(xi)``."""
        p = float(self.meta.get("p", 2.0))
        b = np.abs(self.xi) ** (p - 1.0) * np.sign(self.xi)
        return float(np.dot(b, self.gamma0) / np.dot(b, b))

    def conjugacy_gap(self):
        """max |psi0 - conjugate(phi0)| over the unclipped part of the eta table."""
        c = conjugate(Potential(self.xi, self.phi0, p=float(self.meta.get("p", 2.0))), self.eta)
        ok = ~c.clipped
        if not np.any(ok):
            return math.inf
        return float(np.max(np.abs(self.psi0[ok] - c.values[ok])))

    def corrector(self, xi):
        """Corrector gradient table linearly interpolated in ``xi``."""
        if self.correctors is None:
            raise DomainError("this effective law carries no correctors")
        xi = np.asarray(xi, dtype=float)
        if np.any(xi < self.xi[0] - 1e-12) or np.any(xi > self.xi[-1] + 1e-12):
            raise DomainError(f"macroscopic gradient outside the tabulated range "
                              f"[{self.xi[0]!r}, {self.xi[-1]!r}]")
        i = np.clip(np.searchsorted(self.xi, xi, side="right") - 1, 0, self.xi.size - 2)
        t = ((xi - self.xi[i]) / (self.xi[i + 1] - self.xi[i]))[..., None]
        return (1.0 - t) * self.correctors[i] + t * self.correctors[i + 1]

    def flux_material(self):
        return TabulatedLaw(self)


def _check_symmetric(grid, name):
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(np.diff(grid) <= 0):
        raise ConfigError(f"{name} grid must be strictly increasing")
    if not np.allclose(grid, -grid[::-1], atol=1e-12):
        raise ConfigError(f"{name} grid must be symmetric about 0")
    return grid


def tabulate_effective_law(preset, xi_grid, eta_grid, grid: CellGrid, with_f0=False,
                           rep="fenchel", tol=1e-11, meta=None) -> EffectiveLaw:
    """Fill every table of an :class:`EffectiveLaw` by repeated cell solves.

    Raises the solver error of the first failing ``xi`` (with ``xi`` in the
    message).  The conjugacy gap between ``psi0`` and the discrete conjugate
    of ``phi0`` is stored in ``meta['conjugacy_gap']``.
    """
    mat = _material(preset)
    xi_grid = _check_symmetric(xi_grid, "xi")
    eta_grid = _check_symmetric(eta_grid, "eta")
    tensor = None
    if grid.N == 2:
        tensor = effective_tensor(mat, grid)
    phi0, gamma0, corr = [], [], []
    for x in xi_grid:
        try:
            arg = x if grid.N == 1 else np.array([x, 0.0])
            sol = solve_cell_primal(mat, arg, grid, tol=tol)
        except ConvergenceError as exc:
            raise ConvergenceError(f"cell solve failed at xi={x!r}: {exc}", exc.history) from exc
        phi0.append(sol.value)
        gamma0.append(sol.flux if grid.N == 1 else sol.flux[0])
        if grid.N == 1:
            corr.append(sol.v)
    psi0 = []
    for e in eta_grid:
        arg = e if grid.N == 1 else np.array([e, 0.0])
        psi0.append(solve_cell_dual(mat, arg, grid)[0])
    info = {"preset": mat.spec, "p": mat.p, "N": grid.N, "M": grid.M, "tol": tol}
    info.update(meta or {})
    law = EffectiveLaw(xi_grid, np.array(phi0), np.array(gamma0), eta_grid, np.array(psi0),
                       correctors=np.array(corr) if corr else None, tensor=tensor, meta=info)
    if with_f0:
        if rep == "fenchel":
            law.f0 = law.phi0[:, None] + law.psi0[None, :]
        else:
            law.f0 = np.array([[f0_eval(rep, x, e, grid, pot=mat) for e in eta_grid] for x in xi_grid])
        bad = law.f0 < np.outer(xi_grid, eta_grid) - 1e-8
        if np.any(bad):
            raise ConsistencyError("tabulated F0 violates the representative inequality")
        law.meta["f0_rep"] = rep if isinstance(rep, str) else "fitzpatrick"
    law.check()
    law.meta["conjugacy_gap"] = law.conjugacy_gap()
    return law


class TabulatedLaw(Material):
    """Convex flux potential whose derivative is the monotone PCHIP of gamma0.

    The potential is ``phi0(0) + integral of the interpolant``, so its slope
    is the interpolated effective flux and monotone interpolation keeps it
    convex.  Evaluation outside the table raises :class:`DomainError`.
    """

    def __init__(self, law: EffectiveLaw):
        self.law = law
        self.spec = f"tabulated[{law.meta.get('preset', '?')}]"
        self.p = float(law.meta.get("p", 2.0))
        self._g = PchipInterpolator(law.xi, law.gamma0, extrapolate=False)
        self._G = self._g.antiderivative()
        self._off = float(np.interp(0.0, law.xi, law.phi0)) - float(self._G(0.0))
        self._dg = self._g.derivative()
        self.lo, self.hi = float(law.xi[0]), float(law.xi[-1])
        # dense monotone inverse for the conjugate
        xs = np.linspace(self.lo, self.hi, 8 * law.xi.size + 1)
        self._xs, self._gs = xs, self._g(xs)

    def _check(self, v):
        v = np.asarray(v, dtype=float)
        if np.any(v < self.lo - 1e-12) or np.any(v > self.hi + 1e-12):
            bad = v[(v < self.lo - 1e-12) | (v > self.hi + 1e-12)].flat[0]
            raise DomainError(f"effective law evaluated at {bad!r}, outside "
                              f"[{self.lo!r}, {self.hi!r}]")
        return np.clip(v, self.lo, self.hi)

    def value(self, v, y=0.0):
        v = self._check(v)
        return self._G(v) + self._off + np.zeros(np.shape(y))

    def slope_interval(self, v, y=0.0):
        s = self._g(self._check(v)) + np.zeros(np.shape(y))
        return s, s

    def curvature(self, v, y=0.0):
        return np.maximum(self._dg(self._check(v)), 0.0) + np.zeros(np.shape(y))

    def conj_slope(self, w, y=0.0):
        w = np.asarray(w, dtype=float)
        if np.any(w < self._gs[0] - 1e-12) or np.any(w > self._gs[-1] + 1e-12):
            raise DomainError("flux outside the tabulated range of the effective law")
        # bisection on the monotone interpolant, refined from the dense table
        i = np.clip(np.searchsorted(self._gs, w), 1, self._xs.size - 1)
        lo, hi = self._xs[i - 1], self._xs[i]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            up = self._g(mid) < w
            lo, hi = np.where(up, mid, lo), np.where(up, hi, mid)
        return 0.5 * (lo + hi)

    def conj(self, w, y=0.0):
        v = self.conj_slope(w, y)
        w = np.asarray(w, dtype=float)
        return w * v - self.value(v), np.zeros(np.shape(w), dtype=bool)

    def prox(self, v, y, mu):
        v = np.asarray(v, dtype=float)
        lo = np.full(v.shape, self.lo)
        hi = np.full(v.shape, self.hi)
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            up = mid + mu * self._g(mid) < v
            lo, hi = np.where(up, mid, lo), np.where(up, hi, mid)
        return 0.5 * (lo + hi)


# -- persistence -----------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def persist_law(law: EffectiveLaw, path):
    """Write the commented-table law format (17-digit round trip)."""
    meta = dict(law.meta)
    meta.setdefault("schema", LAW_SCHEMA)
    with open(path, "w") as fh:
        fh.write(f"# schema = {meta.pop('schema')}\n")
        for key in sorted(meta):
            fh.write(f"# {key} = {meta[key]!r}\n" if isinstance(meta[key], float)
                     else f"# {key} = {meta[key]}\n")
        if law.tensor is not None:
            fh.write("# tensor = " + ",".join(_fmt(t) for t in law.tensor.ravel()) + "\n")
        fh.write("xi,phi0,gamma0\n")
        for row in zip(law.xi, law.phi0, law.gamma0):
            fh.write(",".join(_fmt(t) for t in row) + "\n")
        fh.write("eta,psi0\n")
        for row in zip(law.eta, law.psi0):
            fh.write(",".join(_fmt(t) for t in row) + "\n")
        if law.f0 is not None:
            fh.write("xi,eta,f0\n")
            for i, x in enumerate(law.xi):
                for j, e in enumerate(law.eta):
                    fh.write(f"{_fmt(x)},{_fmt(e)},{_fmt(law.f0[i, j])}\n")
        if law.correctors is not None:
            fh.write("xi,corrector\n")
            for x, row in zip(law.xi, law.correctors):
                fh.write(_fmt(x) + "," + ",".join(_fmt(t) for t in row) + "\n")


def _parse_meta_value(val):
    for conv in (int, float):
        try:
            return conv(val)
        except ValueError:
            pass
    return val


def load_law(path, config_hash=None) -> EffectiveLaw:
    """Read a law file; rejects other schema versions and mismatched config hashes."""
    meta, blocks, current = {}, {}, None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
                continue
            if line[0].isalpha():
                current = line.strip()
                blocks[current] = []
                continue
            blocks[current].append([float(t) for t in line.split(",")])
    if meta.get("schema") != LAW_SCHEMA:
        raise SchemaError(f"{path}: expected schema {LAW_SCHEMA}, found {meta.get('schema')!r}")
    if config_hash is not None and meta.get("config_hash") not in (None, "none", config_hash):
        raise SchemaError(f"{path}: config hash {meta.get('config_hash')} does not match {config_hash}")
    try:
        t1 = np.array(blocks["xi,phi0,gamma0"], dtype=float)
        t2 = np.array(blocks["eta,psi0"], dtype=float)
    except KeyError as exc:
        raise SchemaError(f"{path}: missing table block {exc}") from None
    tensor = None
    if "tensor" in meta:
        tensor = np.array([float(t) for t in meta.pop("tensor").split(",")]).reshape(2, 2)
    f0 = None
    if "xi,eta,f0" in blocks:
        f0 = np.array(blocks["xi,eta,f0"])[:, 2].reshape(t1.shape[0], t2.shape[0])
    corr = None
    if "xi,corrector" in blocks:
        corr = np.array(blocks["xi,corrector"])[:, 1:]
    meta = {k: (_parse_meta_value(v) if k != "schema" else v) for k, v in meta.items()}
    return EffectiveLaw(t1[:, 0], t1[:, 1], t1[:, 2], t2[:, 0], t2[:, 1], f0=f0,
                        correctors=corr, tensor=tensor, meta=meta)
