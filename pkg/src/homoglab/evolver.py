"""Implicit Euler for the doubly-nonlinear problem on Omega = (0, 1).

Unknowns are continuous piecewise-linear fields on a uniform mesh with
``u = 0`` at both ends.  The alpha potential and ``w`` use a lumped nodal
quadrature (weight ``h`` per interior node); the flux potential, ``z`` and the
source use element midpoints.  The microscopic coordinate is
``y = (j mod Np) / Np`` at node ``j`` and ``((e mod Np) + 1/2) / Np`` at the
midpoint of element ``e``, where ``Np = eps / h`` is the number of elements
per period, so every period is sampled identically.

One time step minimizes

    E(u) = sum_i h phi(u_i) + k sum_e h j(u_x,e) - sum_i h w_i^{n-1} u_i
           + k sum_e h H_e u_x,e

whose Hessian is tridiagonal.  ``w^n`` is then recovered from the discrete
balance ``h (w^n - w^{n-1}) = k [(z + H)_right - (z + H)_left]`` and
checked against the inclusion ``w^n in d phi(u^n)``.

When the flux potential has a corner (its subdifferential jumps) and the
conjugate of the alpha potential is finite everywhere, the step is solved in the flux variable instead:

    min_z  sum_i h phi*(w_i(z)) + k sum_e h j*(z_e),
    w(z) = w^{n-1} + (k/h) [(z + H)_right - (z + H)_left],

a bound-constrained problem whose constraints are the slope range of ``j``.
Then ``u = (phi*)'(w)`` and the inclusion for ``w`` holds by construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg import LinAlgError, solveh_banded

from .cellsolve import EffectiveLaw
from .errors import ConfigError, ConsistencyError, ConvergenceError, DomainError, StepError
from .fitz import RepresentativeFn
from .presets import (InitialDatum, Material, Source, parse_initial, parse_material,
                      parse_source)

MU_SCHEDULE = tuple(10.0 ** -e for e in range(2, 7))  # 1e-2 ... 1e-6
_EPS = float(np.finfo(float).eps)


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Data of one evolution problem.

    ``eps=None`` selects homogenized mode, in which ``phi``, ``gamma``,
    ``source`` and ``w0`` are already the single-scale objects.
    """

    phi: Material
    gamma: Material
    source: Source
    w0: Callable
    T: float
    m: int
    n_el: int
    eps: Optional[float] = None
    law: Optional[EffectiveLaw] = None
    grad_tol: float = 1e-10
    incl_tol: float = 1e-8
    max_newton: int = 100
    n_gauss: int = 4

    def __post_init__(self):
        if not self.T > 0:
            raise ConfigError("final time must be positive")
        if self.m < 1 or self.n_el < 2:
            raise ConfigError("need at least one time step and two elements")
        if self.eps is not None:
            r = self.eps * self.n_el
            if not 0 < self.eps <= 1 or abs(r - round(r)) > 1e-9 * max(r, 1.0):
                raise ConfigError(f"eps/h = {r!r} must be a positive integer")
            if round(r) < 16:
                raise ConfigError(f"eps/h = {round(r)} resolves a period with fewer than 16 elements")

    # -- construction ----------------------------------------------------------
    @classmethod
    def epsilon(cls, phi, gamma, eps, T=0.1, m=64, mesh_factor=16, source="zero",
                w0="sine(1)", **kw):
        """eps-problem on a mesh with ``mesh_factor`` elements per period."""
        n = mesh_factor / eps
        if abs(n - round(n)) > 1e-9 * n:
            raise ConfigError(f"mesh factor {mesh_factor} and eps={eps!r} give a fractional mesh")
        return cls(parse_material(phi), parse_material(gamma), parse_source(source),
                   _datum(w0), float(T), int(m), int(round(n)), float(eps), **kw)

    @classmethod
    def homogenized(cls, law: EffectiveLaw, phi, T=0.1, m=64, n_el=512, source="zero",
                    w0="sine(1)", **kw):
        """Single-scale problem with the cell-averaged alpha potential and the
        tabulated effective flux law."""
        phi = parse_material(phi)
        src = parse_source(source)
        w0 = _datum(w0)
        mat = law.flux_material()
        if not isinstance(src, Source) or (type(src).averaged is not Source.averaged
                                           and not _law_homogeneous(law)):
            raise ConfigError("oscillating sources are supported in homogenized mode "
                              "only for y-independent flux laws")
        w0a = w0.averaged() if hasattr(w0, "averaged") else w0
        return cls(phi.averaged(), mat, src.averaged(), w0a, float(T), int(m), int(n_el), None,
                   law=law, **kw)

    def homogenize(self, law: EffectiveLaw, n_el=None):
        """Homogenized counterpart of this eps-problem."""
        return ProblemData.homogenized(law, self.phi, self.T, self.m, n_el or self.n_el,
                                       self.source, self.w0, grad_tol=self.grad_tol,
                                       incl_tol=self.incl_tol, max_newton=self.max_newton,
                                       n_gauss=self.n_gauss)

    # -- mesh ----------------------------------------------------------------
    @property
    def h(self):
        return 1.0 / self.n_el

    @property
    def k(self):
        return self.T / self.m

    @property
    def Np(self):
        return None if self.eps is None else int(round(self.eps * self.n_el))

    @property
    def x(self):
        return np.arange(self.n_el + 1) * self.h

    @property
    def xm(self):
        return (np.arange(self.n_el) + 0.5) * self.h

    @property
    def y_nodes(self):
        if self.eps is None:
            return np.zeros(self.n_el + 1)
        return np.mod(np.arange(self.n_el + 1), self.Np) / self.Np

    @property
    def y_mid(self):
        if self.eps is None:
            return np.zeros(self.n_el)
        return (np.mod(np.arange(self.n_el), self.Np) + 0.5) / self.Np

    @property
    def mode(self):
        return "homogenized" if self.eps is None else "eps"

    def source_mean(self, n):
        """Time average of the source over step ``n`` at the element midpoints."""
        if self.source.is_zero:
            return np.zeros(self.n_el)
        s, wts = np.polynomial.legendre.leggauss(self.n_gauss)
        t0 = (n - 1) * self.k
        ts = t0 + 0.5 * self.k * (s + 1.0)
        vals = [self.source(self.xm, t, self.y_mid) for t in ts]
        return 0.5 * sum(wi * v for wi, v in zip(wts, vals))

    def initial_w(self):
        return np.asarray(self.w0(self.x, self.y_nodes), dtype=float) + np.zeros(self.n_el + 1)


def _law_homogeneous(law):
    return law.correctors is None or not np.any(law.correctors)


def _datum(w0):
    if isinstance(w0, str):
        return parse_initial(w0)
    return w0


class ShiftedDatum(InitialDatum):
    """``w0 + c``; used to probe the discrete initial condition."""

    def __init__(self, base, c):
        self.base, self.c = base, float(c)
        self.spec = f"{getattr(base, 'spec', 'w0')}+{c!r}"

    def __call__(self, x, y=0.0):
        return self.base(x, y) + self.c


# -- trajectory ------------------------------------------------------------------

@dataclass(eq=False)
class Trajectory:
    """Nodal ``u``, ``w`` (shape (m+1, n_el+1)) and midpoint ``z`` (shape (m+1, n_el))."""

    t: np.ndarray
    x: np.ndarray
    u: np.ndarray
    w: np.ndarray
    z: np.ndarray
    diagnostics: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def m(self):
        return self.t.size - 1

    @property
    def k(self):
        return float(self.t[1] - self.t[0])

    @property
    def h(self):
        return float(self.x[1] - self.x[0])

    @property
    def xm(self):
        return 0.5 * (self.x[1:] + self.x[:-1])

    @property
    def ux(self):
        return np.diff(self.u, axis=1) / self.h

    def _step_index(self, t):
        # piecewise constant: value n on ((n-1)k, nk], value 1 at t = 0
        n = np.ceil(np.asarray(t, dtype=float) / self.k - 1e-12).astype(int)
        return np.clip(n, 1, self.m)

    def u_bar(self, t):
        return self.u[self._step_index(t)]

    def z_bar(self, t):
        return self.z[self._step_index(t)]

    def w_bar(self, t):
        return self.w[self._step_index(t)]

    def w_lin(self, t):
        """Piecewise-linear time interpolate of ``w``."""
        s = np.clip(float(t) / self.k, 0.0, self.m)
        n = min(int(math.floor(s)), self.m - 1)
        th = s - n
        return (1.0 - th) * self.w[n] + th * self.w[n + 1]

    def copy(self):
        return replace(self, u=self.u.copy(), w=self.w.copy(), z=self.z.copy(),
                       diagnostics=list(self.diagnostics), meta=dict(self.meta))


@dataclass
class StepState:
    u: np.ndarray
    w: np.ndarray
    z: np.ndarray
    info: dict = field(default_factory=dict)


# -- the step functional ---------------------------------------------------------

class _StepProblem:
    """Energy, gradient and banded Hessian of one implicit Euler step."""

    def __init__(self, data: ProblemData, w_prev, H):
        self.d = data
        self.h, self.k = data.h, data.k
        self.yn = data.y_nodes[1:-1]
        self.ym = data.y_mid
        self.wp = w_prev[1:-1]
        self.H = H

    def _parts(self, mat, v, y, mu):
        if mu is not None and mat.kinks:
            return mat.moreau(v, y, mu)
        return mat.value(v, y), mat.slope(v, y), mat.curvature(v, y)

    def full(self, ui):
        return np.concatenate([[0.0], ui, [0.0]])

    def evaluate(self, ui, mu=None, need_hess=True):
        h, k = self.h, self.k
        g = np.diff(self.full(ui)) / h
        pv, p1, p2 = self._parts(self.d.phi, ui, self.yn, mu)
        jv, j1, j2 = self._parts(self.d.gamma, g, self.ym, mu)
        E = h * np.sum(pv) + k * h * np.sum(jv) - h * np.dot(self.wp, ui) + k * h * np.dot(self.H, g)
        q = j1 + self.H
        grad = h * p1 - h * self.wp + k * (q[:-1] - q[1:])
        if not need_hess:
            return float(E), grad, j1
        j2 = np.where(np.isfinite(j2), j2, 0.0)
        p2 = np.where(np.isfinite(p2), p2, 0.0)
        diag = h * p2 + (k / h) * (j2[:-1] + j2[1:])
        off = -(k / h) * j2[1:-1]
        return float(E), grad, j1, diag, off

    def recover_w(self, ui, z):
        q = z + self.H
        return self.wp + (self.k / self.h) * (q[1:] - q[:-1])


def _gradient_floor(diag, u):
    """Rounding level of the gradient: steep smoothed curvatures amplify the
    relative error of ``u`` by the Hessian diagonal."""
    return 4.0 * _EPS * float(np.max(np.abs(diag), initial=0.0)) * max(1.0, float(np.max(np.abs(u), initial=0.0)))


def _newton(prob: _StepProblem, u0, mu, fixed, gtol, max_iter, history):
    """Damped Newton with Armijo backtracking; ``fixed`` nodes are held."""
    u = u0.copy()
    free = ~fixed
    E, grad, _, diag, off = prob.evaluate(u, mu)
    for it in range(max_iter):
        gfree = np.where(free, grad, 0.0)
        gn = float(np.max(np.abs(gfree))) if gfree.size else 0.0
        history.append(gn)
        if gn <= max(gtol, _gradient_floor(diag, u)):
            return u, it
        dg = np.where(free, diag, 1.0)
        of = off * (free[:-1] & free[1:])
        reg = 1e-14 * max(float(np.max(np.abs(dg))), 1.0)
        ab = np.zeros((2, u.size))
        ab[0, 1:] = of
        ab[1] = dg + reg
        try:
            d = -solveh_banded(ab, gfree, check_finite=False)
        except (LinAlgError, ValueError):
            d = -gfree / np.maximum(dg, reg)
        d = np.where(free, d, 0.0)
        slope = float(np.dot(gfree, d))
        t = 1.0
        while True:
            un = u + t * d
            try:
                En, gradn, _ = prob.evaluate(un, mu, need_hess=False)
                ok = np.isfinite(En)
            except DomainError:
                ok = False
            if ok:
                if En <= E + 1e-4 * t * slope:
                    break
                gnn = float(np.max(np.abs(np.where(free, gradn, 0.0))))
                if En <= E + 1e-13 * (1.0 + abs(E)) and gnn < gn:
                    break
            t *= 0.5
            if t < 1e-14:
                raise ConvergenceError(f"line search failed with gradient norm {gn!r}", history)
        u = un
        E, grad, _, diag, off = prob.evaluate(u, mu)
    gn = float(np.max(np.abs(np.where(free, grad, 0.0))))
    if gn <= max(gtol, _gradient_floor(diag, u)):
        return u, max_iter
    raise ConvergenceError(f"Newton did not converge; gradient norm {gn!r}", history)


def step(prev: StepState, data: ProblemData, n: int) -> StepState:
    """Advance from ``prev`` (state ``n-1``) to time level ``n``.

    Raises
    ------
    ConvergenceError
        The inner minimization did not reach the gradient tolerance; the
        gradient-norm history is attached.
    StepError
        The recovered ``w^n`` violates ``w^n in d phi(u^n)`` beyond tolerance.
    """
    H = data.source_mean(n)
    prob = _StepProblem(data, prev.w, H)
    h, k = data.h, data.k
    wp = prev.w[1:-1]
    scale = h * max(1.0, float(np.max(np.abs(wp), initial=0.0)),
                    (k / h) * float(np.max(np.abs(H), initial=0.0)))
    gtol = data.grad_tol * scale
    history: list = []
    u = prev.u[1:-1].copy()
    if _has_corner(data.gamma, data.y_mid) and _finite_conjugate(data.phi, data.y_nodes):
        return _dual_step(prev, data, n, H)
    nfree = np.zeros(u.size, dtype=bool)
    kinked = bool(data.phi.kinks or data.gamma.kinks)
    schedule = MU_SCHEDULE if kinked else (None,)
    iters = 0
    try:
        for mu in schedule:
            u, it = _newton(prob, u, mu, nfree, gtol, data.max_newton, history)
            iters += it
    except ConvergenceError as exc:
        raise ConvergenceError(f"step {n}: {exc}", history) from None
    mu_last = schedule[-1]
    fixed = nfree
    if data.phi.kinks:
        u, fixed, it = _active_set_polish(prob, u, mu_last, gtol, data, history)
        iters += it
        mu_last = mu_last if data.gamma.kinks else None
    elif kinked:
        mu_last = mu_last  # flux kinks: keep the smoothed selection
    _, _, z = prob.evaluate(u, mu_last if data.gamma.kinks else None, need_hess=False)
    w_int = prob.recover_w(u, z)
    lo, hi = data.phi.slope_interval(u, prob.yn)
    viol = np.maximum(np.maximum(lo - w_int, w_int - hi), 0.0)
    tol = data.incl_tol * (1.0 + float(np.max(np.abs(w_int), initial=0.0)))
    worst = float(np.max(viol, initial=0.0))
    if worst > tol:
        raise StepError(f"step {n}: recovered w violates its inclusion by {worst!r}", history)
    w_int = np.clip(w_int, lo, hi)
    u_full = prob.full(u)
    w_full = np.empty_like(prev.w)
    w_full[1:-1] = w_int
    # boundary nodes carry no quadrature weight; keep the selection of
    # d phi(0) nearest to the previous value
    lo_b, hi_b = data.phi.slope_interval(np.zeros(2), data.y_nodes[[0, -1]])
    w_full[[0, -1]] = np.clip(prev.w[[0, -1]], lo_b, hi_b)
    info = {"n": n, "iterations": iters, "grad_history": history,
            "inclusion_residual": worst, "n_fixed": int(np.sum(fixed))}
    return StepState(u_full, w_full, z, info)


def _has_corner(mat: Material, y):
    """True when the subdifferential of ``mat`` jumps at one of its kinks."""
    for c in mat.kinks:
        lo, hi = mat.slope_interval(np.full(np.shape(y), float(c)), y)
        if np.any(np.asarray(hi) > np.asarray(lo)):
            return True
    return False


def _finite_conjugate(mat: Material, y):
    """True when ``mat*`` is finite everywhere (probed far out on both sides)."""
    far = np.full(np.shape(y), 1e6)
    return not (np.any(mat.conj(far, y)[1]) or np.any(mat.conj(-far, y)[1]))


def _conj_curvature(mat: Material, w, y):
    """Second derivative of the conjugate: ``1/phi''`` off corners, 0 inside a jump."""
    u = np.asarray(mat.conj_slope(w, y), dtype=float) + np.zeros(np.shape(w))
    lo, hi = mat.slope_interval(u, y)
    c = np.asarray(mat.curvature(u, y), dtype=float) + np.zeros(np.shape(w))
    inside = (hi > lo) & (w > lo) & (w < hi)
    with np.errstate(divide="ignore"):
        inv = np.where(c > 0, 1.0 / np.where(c > 0, c, 1.0), 1e12)
    return np.where(inside, 0.0, np.minimum(inv, 1e12))


class _DualStep:
    """Flux-variable form of one step, scaled by ``1/(k h)``."""

    def __init__(self, data: ProblemData, w_prev, H):
        self.d, self.h, self.k = data, data.h, data.k
        self.yn, self.ym = data.y_nodes[1:-1], data.y_mid
        self.wp, self.H = w_prev[1:-1], H
        big = np.full(self.ym.shape, np.inf)
        self.lo = np.broadcast_to(np.asarray(data.gamma.slope_interval(-big, self.ym)[0], dtype=float),
                                  big.shape).copy()
        self.hi = np.broadcast_to(np.asarray(data.gamma.slope_interval(big, self.ym)[1], dtype=float),
                                  big.shape).copy()

    def w(self, z):
        q = z + self.H
        return self.wp + (self.k / self.h) * (q[1:] - q[:-1])

    def u(self, z):
        ui = np.asarray(self.d.phi.conj_slope(self.w(z), self.yn), dtype=float)
        return np.concatenate([[0.0], ui, [0.0]])

    def energy(self, z):
        inner = np.clip(z, self.lo, self.hi)
        jv = self.d.gamma.conj(inner, self.ym)[0]
        pv = self.d.phi.conj(self.w(z), self.yn)[0]
        return float(np.sum(pv) / self.k + np.sum(jv))

    def gradient(self, z):
        g = np.diff(self.u(z)) / self.h
        inner = np.clip(z, self.lo, self.hi)
        return np.asarray(self.d.gamma.conj_slope(inner, self.ym), dtype=float) - g, g

    def hessian(self, z):
        c = _conj_curvature(self.d.phi, self.w(z), self.yn)
        cz = _conj_curvature(self.d.gamma, np.clip(z, self.lo, self.hi), self.ym)
        cz = np.where(np.isfinite(self.lo) & (z <= self.lo) | np.isfinite(self.hi) & (z >= self.hi), 0.0, cz)
        r = self.k / self.h ** 2
        diag = cz.copy()
        diag[:-1] += r * c
        diag[1:] += r * c
        return diag, -r * c


def _dual_step(prev: StepState, data: ProblemData, n: int, H) -> StepState:
    """Projected Newton on the bound-constrained flux problem."""
    prob = _DualStep(data, prev.w, H)
    lo, hi = prob.lo, prob.hi
    z = np.clip(prev.z, lo, hi)
    history: list = []
    E = prob.energy(z)
    for it in range(data.max_newton + 1):
        grad, g = prob.gradient(z)
        pg = z - np.clip(z - grad, lo, hi)
        res = float(np.max(np.abs(pg)))
        history.append(res)
        if res <= data.grad_tol * max(1.0, float(np.max(np.abs(g)))):
            break
        if it == data.max_newton:
            raise ConvergenceError(f"step {n}: projected Newton did not converge; residual {res!r}", history)
        # variables pinned at a bound with the gradient pushing outward
        delta = min(res, 1e-3)
        active = ((z <= lo + delta) & (grad > 0)) | ((z >= hi - delta) & (grad < 0))
        diag, off = prob.hessian(z)
        free = ~active
        dg = np.where(free, diag, 1.0)
        reg = 1e-12 * max(float(np.max(np.abs(dg))), 1.0)
        ab = np.zeros((2, z.size))
        ab[0, 1:] = off * (free[:-1] & free[1:])
        ab[1] = dg + reg
        d = -solveh_banded(ab, np.where(free, grad, 0.0), check_finite=False)
        d = np.where(free, d, -grad)
        t = 1.0
        while True:
            zn = np.clip(z + t * d, lo, hi)
            En = prob.energy(zn)
            decrease = float(np.dot(np.where(free, grad, 0.0), np.where(free, z - zn, 0.0))) \
                + float(np.dot(np.where(active, grad, 0.0), z - zn))
            if En <= E - 1e-4 * decrease or (En <= E + 1e-13 * (1.0 + abs(E)) and
                                               float(np.max(np.abs(zn - np.clip(zn - prob.gradient(zn)[0], lo, hi)))) < res):
                break
            t *= 0.5
            if t < 1e-14:
                raise ConvergenceError(f"step {n}: projected line search failed at residual {res!r}", history)
        z, E = zn, En
    w_full = np.empty_like(prev.w)
    w_full[1:-1] = prob.w(z)
    lo_b, hi_b = data.phi.slope_interval(np.zeros(2), data.y_nodes[[0, -1]])
    w_full[[0, -1]] = np.clip(prev.w[[0, -1]], lo_b, hi_b)
    info = {"n": n, "iterations": len(history) - 1, "grad_history": history,
            "inclusion_residual": 0.0, "n_fixed": 0, "solver": "dual"}
    return StepState(prob.u(z), w_full, z, info)


def _active_set_polish(prob, u, mu, gtol, data, history):
    """Snap nodes sitting at a kink of phi and re-solve exactly on the rest."""
    phi, yn = data.phi, prob.yn
    P = phi.prox(u, yn, mu)
    kinks = np.asarray(phi.kinks, dtype=float)
    at = np.zeros(u.size, dtype=bool)
    target = np.zeros(u.size)
    for c in kinks:
        hit = P == c
        at |= hit
        target = np.where(hit, c, target)
    iters = 0
    for _ in range(20):
        trial = np.where(at, target, u)
        try:
            trial, it = _newton(prob, trial, None, at, gtol, data.max_newton, history)
        except ConvergenceError:
            # free nodes oscillating across a kink join the active set
            near = ~at & (np.min(np.abs(trial[:, None] - kinks[None, :]), axis=1) < 1e-6)
            if not np.any(near):
                return u, np.zeros(u.size, dtype=bool), iters
            at |= near
            target = np.where(near, kinks[np.argmin(np.abs(trial[:, None] - kinks[None, :]), axis=1)], target)
            continue
        iters += it
        _, _, z = prob.evaluate(trial, mu if data.gamma.kinks else None, need_hess=False)
        w = prob.recover_w(trial, z)
        lo, hi = phi.slope_interval(trial, yn)
        tol = data.incl_tol * (1.0 + float(np.max(np.abs(w), initial=0.0)))
        release = at & ((w < lo - tol) | (w > hi + tol))
        if not np.any(release):
            return trial, at, iters
        at &= ~release
        u = trial
    return u, at, iters


def initial_state(data: ProblemData) -> StepState:
    """``w^0`` from the datum, ``u^0`` a selection of d phi*(w^0), ``z^0 = j'(u^0_x)``."""
    w0 = data.initial_w()
    u0 = np.asarray(data.phi.conj_slope(w0, data.y_nodes), dtype=float) + np.zeros_like(w0)
    u0[[0, -1]] = 0.0
    g = np.diff(u0) / data.h
    z0 = np.asarray(data.gamma.slope(g, data.y_mid), dtype=float) + np.zeros_like(g)
    return StepState(u0, w0, z0, {"n": 0})


def solve_parabolic(data: ProblemData) -> Trajectory:
    """Run ``m`` implicit Euler steps from the initial datum."""
    st = initial_state(data)
    U, Wt, Z, diags = [st.u], [st.w], [st.z], []
    for n in range(1, data.m + 1):
        st = step(st, data, n)
        U.append(st.u)
        Wt.append(st.w)
        Z.append(st.z)
        diags.append(st.info)
    t = np.arange(data.m + 1) * data.k
    meta = {"mode": data.mode, "eps": data.eps, "phi": data.phi.spec, "gamma": data.gamma.spec,
            "source": getattr(data.source, "spec", "?"), "w0": getattr(data.w0, "spec", "?"),
            "T": data.T, "m": data.m, "n_el": data.n_el}
    return Trajectory(t, data.x, np.array(U), np.array(Wt), np.array(Z), diags, meta)


def step_functional(u, w_prev, data: ProblemData, n: int) -> float:
    """Value of the step-``n`` functional at the nodal field ``u``."""
    prob = _StepProblem(data, np.asarray(w_prev, dtype=float), data.source_mean(n))
    return prob.evaluate(np.asarray(u, dtype=float)[1:-1], None, need_hess=False)[0]


# -- certificates and monitors -----------------------------------------------------

@dataclass
class CertificateReport:
    total: float
    alpha: float
    gamma: float
    per_step_alpha: np.ndarray
    per_step_gamma: np.ndarray
    scale: float
    representative: str
    alpha_pointwise_max: float = 0.0
    clipped: int = 0

    def within(self, lo_rel=-1e-8, hi_rel=1e-6):
        lo, hi = lo_rel * self.scale, hi_rel * self.scale
        return lo <= self.alpha <= hi and lo <= self.gamma <= hi


def _gamma_rep_values(rep, data, g, z):
    """Representative value f(g, z) at the element midpoints of one time level."""
    if rep is None or rep == "fenchel":
        jv = data.gamma.value(g, data.y_mid)
        cv, clip = data.gamma.conj(z, data.y_mid)
        return jv + cv, clip
    if isinstance(rep, RepresentativeFn):
        val, clip = rep.evaluate(g, z)
        return val, clip
    if isinstance(rep, dict):
        phases = data.gamma.phases(data.y_mid)
        out = np.empty_like(g)
        for lab, r in rep.items():
            sel = phases == lab
            out[sel] = r(g[sel], z[sel])
        return out, np.zeros(g.shape, dtype=bool)
    raise ConfigError(f"unsupported representative {rep!r}")


def phi_certificate(traj: Trajectory, data: ProblemData, rep=None, tol=1e-8) -> CertificateReport:
    """Space-time quadrature of the two nonnegative certificate integrands.

    The alpha part sums ``phi(u) + phi*(w) - w u`` over interior nodes with
    weight ``k h``; the gamma part sums ``f(u_x, z) - u_x z`` over element
    midpoints with weight ``k h``, where ``f`` is the Fenchel function of the
    flux potential (default) or the supplied Fitzpatrick representative(s).
    Time levels ``1..m`` are used (the piecewise-constant interpolates).
    """
    h, k = traj.h, traj.k
    yn = data.y_nodes[1:-1]
    A, G = [], []
    pmax, nclip, pair = 0.0, 0, 0.0
    ux = traj.ux
    for n in range(1, traj.m + 1):
        u, w = traj.u[n, 1:-1], traj.w[n, 1:-1]
        cv, clip = data.phi.conj(w, yn)
        gap_a = data.phi.value(u, yn) + cv - w * u
        gap_a = np.where(clip, np.inf, gap_a)
        g, z = ux[n], traj.z[n]
        fv, clipg = _gamma_rep_values(rep, data, g, z)
        gap_g = np.where(clipg, np.inf, fv - g * z)
        nclip += int(np.sum(clip)) + int(np.sum(clipg))
        pmax = max(pmax, float(np.max(gap_a, initial=0.0)))
        A.append(k * h * float(np.sum(gap_a)))
        G.append(k * h * float(np.sum(gap_g)))
        pair += k * h * (float(np.sum(np.abs(w * u))) + float(np.sum(np.abs(g * z))))
    A, G = np.array(A), np.array(G)
    scale = max(1.0, pair)
    alpha, gamma = float(A.sum()), float(G.sum())
    name = "fenchel" if rep is None or rep == "fenchel" else "fitzpatrick"
    for part, val in (("alpha", alpha), ("gamma", gamma)):
        if val < -tol * scale:
            raise ConsistencyError(f"certificate {part}-part {val!r} is negative beyond tolerance")
    return CertificateReport(alpha + gamma, alpha, gamma, A, G, scale, name, pmax, nclip)


@dataclass
class NormRecord:
    u_L2H1: float
    z_L2: float
    w_LinfL2: float
    dtw_L2Hm1: float

    def as_dict(self):
        return {"u_L2H1": self.u_L2H1, "z_L2": self.z_L2, "w_LinfL2": self.w_LinfL2,
                "dtw_L2Hm1": self.dtw_L2Hm1}


def apriori_monitor(traj: Trajectory) -> NormRecord:
    """Discrete norms of the uniform estimates.

    ``||u||_{L2(H1_0)}`` and ``||z||_{L2}`` use the piecewise-constant
    interpolates; ``||w||_{Linf(L2)}`` the lumped nodal norm; the time
    derivative of ``w`` is measured in the discrete H^-1 norm
    ``sqrt(r^T K^-1 r)`` of the functional ``r_i = h (w_i^n - w_i^{n-1}) / k``.
    """
    h, k = traj.h, traj.k
    ux = traj.ux[1:]
    u_n = math.sqrt(k * h * float(np.sum(ux ** 2)))
    z_n = math.sqrt(k * h * float(np.sum(traj.z[1:] ** 2)))
    w_n = float(np.max(np.sqrt(h * np.sum(traj.w[:, 1:-1] ** 2, axis=1))))
    n_int = traj.x.size - 2
    ab = np.zeros((2, n_int))
    ab[0, 1:] = -1.0 / h
    ab[1] = 2.0 / h
    r = h * np.diff(traj.w[:, 1:-1], axis=0) / k  # (m, n_int)
    if n_int and r.size:
        s = solveh_banded(ab, r.T)
        dual_sq = np.sum(r.T * s, axis=0)
    else:
        dual_sq = np.zeros(0)
    d_n = math.sqrt(k * float(np.sum(dual_sq)))
    return NormRecord(u_n, z_n, w_n, d_n)


def weak_residual(traj: Trajectory, data: ProblemData, tests=None):
    """Discrete weak form with tests ``hat_i(x) * hat_l(t)``, ``hat_l(T) = 0``.

    ``tests`` is an iterable of ``(i, l)`` pairs (interior node ``i``, time
    node ``l < m``); by default all such pairs are used.  Returns the maximal
    absolute residual.
    """
    R = weak_residual_table(traj, data)
    if tests is None:
        return float(np.max(np.abs(R)))
    return float(max(abs(R[l, i - 1]) for i, l in tests))


def weak_residual_table(traj: Trajectory, data: ProblemData):
    """Residuals ``R[l, i-1]`` for every interior node ``i`` and time node ``l < m``."""
    h, k, m = traj.h, traj.k, traj.m
    q = np.zeros_like(traj.z)
    for n in range(1, m + 1):
        q[n] = traj.z[n] + data.source_mean(n)
    dq = q[:, :-1] - q[:, 1:]   # pairing with the hat gradient at node i
    w = traj.w[:, 1:-1]
    w0 = data.initial_w()[1:-1]
    R = np.empty((m, w.shape[1]))
    R[0] = h * (0.5 * (w[0] + w[1]) - w0) + 0.5 * k * dq[1]
    for l in range(1, m):
        R[l] = 0.5 * h * (w[l + 1] - w[l - 1]) + 0.5 * k * (dq[l] + dq[l + 1])
    return R


def l2_space_time_error(a: Trajectory, b: Trajectory) -> float:
    """``||u_a - u_b||`` in ``L2(Omega_T)`` for piecewise-constant-in-time P1 fields.

    Both meshes must nest into the finer one; the difference is integrated
    exactly with the consistent P1 mass matrix on the finer mesh.
    """
    if a.m != b.m or abs(a.k - b.k) > 1e-14:
        raise ConfigError("trajectories must share the time grid")
    nf = max(a.x.size, b.x.size) - 1
    xf = np.linspace(0.0, 1.0, nf + 1)

    def prolong(tr):
        n = tr.x.size - 1
        if nf % n:
            raise ConfigError("meshes are not nested")
        return np.array([np.interp(xf, tr.x, u) for u in tr.u])

    d = prolong(a) - prolong(b)
    hf = 1.0 / nf
    dl, dr = d[1:, :-1], d[1:, 1:]
    per_step = hf / 3.0 * np.sum(dl * dl + dl * dr + dr * dr, axis=1)
    return math.sqrt(a.k * float(np.sum(per_step)))


def l2_space_time_norm(traj: Trajectory) -> float:
    u = traj.u[1:]
    ul, ur = u[:, :-1], u[:, 1:]
    return math.sqrt(traj.k * traj.h / 3.0 * float(np.sum(ul * ul + ul * ur + ur * ur)))
