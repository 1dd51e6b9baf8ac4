"""Numerical two-scale convergence diagnostics.

Oscillating test functions are products ``psi(x) rho(x/eps)`` with a
polynomial ``psi`` of degree at most 3 and ``rho`` a constant or a
trigonometric mode of frequency at most 4.  Pairings are computed with
element-wise Gauss quadrature, so for a nodal P1 field they are exact up to
the quadrature of the smooth test function.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .cellsolve import EffectiveLaw
from .errors import ConfigError
from .evolver import Trajectory

DEFAULT_CELLS_PER_PERIOD = 64


@dataclass(frozen=True)
class TwoScaleTest:
    """``psi(x) rho(y)`` with ``psi = x**degree`` and ``rho`` in {1, sin, cos}(2 pi freq y)."""

    degree: int = 0
    kind: str = "const"
    freq: int = 0
    time: Optional[Callable] = None

    def __post_init__(self):
        if not 0 <= self.degree <= 3:
            raise ConfigError("test polynomials have degree at most 3")
        if self.kind not in ("const", "sin", "cos"):
            raise ConfigError(f"unknown microscopic factor {self.kind!r}")
        if self.kind != "const" and not 1 <= self.freq <= 4:
            raise ConfigError("trigonometric tests use frequencies 1..4")

    @property
    def id(self):
        mic = "1" if self.kind == "const" else f"{self.kind}(2pi*{self.freq}y)"
        return f"x^{self.degree}*{mic}"

    def psi(self, x):
        return np.asarray(x, dtype=float) ** self.degree

    def rho(self, y):
        y = np.asarray(y, dtype=float)
        if self.kind == "const":
            return np.ones_like(y)
        f = np.sin if self.kind == "sin" else np.cos
        return f(2.0 * math.pi * self.freq * y)

    def __call__(self, x, y):
        return self.psi(x) * self.rho(y)


def default_family() -> list:
    """Degrees 0..3 times {1, sin, cos} with frequencies 1..4 (36 tests)."""
    fam = []
    for d in range(4):
        fam.append(TwoScaleTest(d))
        for kind in ("sin", "cos"):
            for f in range(1, 5):
                fam.append(TwoScaleTest(d, kind, f))
    return fam


@dataclass(eq=False)
class TwoScaleField:
    """A field ``U(x, y)`` sampled on x-points times a uniform periodic y-grid.

    ``y_j = (j + 1/2)/M``.  With ``x_kind='nodes'`` the field is piecewise
    linear in x between the points; with ``x_kind='cells'`` it is constant on
    cells of width ``width`` centred at the points.
    """

    x: np.ndarray
    values: np.ndarray
    x_kind: str = "nodes"
    width: Optional[float] = None

    @property
    def M(self):
        return self.values.shape[1]

    @property
    def y(self):
        return (np.arange(self.M) + 0.5) / self.M

    @property
    def average(self):
        """The cell average ``u_hat(x)``."""
        return self.values.mean(axis=1)

    @property
    def fluctuation(self):
        return self.values - self.average[:, None]

    @classmethod
    def from_function(cls, f, nx=257, M=64):
        x = np.linspace(0.0, 1.0, nx)
        y = (np.arange(M) + 0.5) / M
        return cls(x, np.asarray(f(x[:, None], y[None, :]), dtype=float) + np.zeros((nx, M)))

    def _x_quadrature(self, n_gauss=4):
        """Points and weights in x, with the interpolation matrix onto them."""
        if self.x_kind == "cells":
            return self.x, np.full(self.x.size, self.width), np.eye(self.x.size)
        s, w = np.polynomial.legendre.leggauss(n_gauss)
        xl, xr = self.x[:-1], self.x[1:]
        hx = xr - xl
        pts = (xl[:, None] + 0.5 * hx[:, None] * (s[None, :] + 1.0)).ravel()
        wts = (0.5 * hx[:, None] * w[None, :]).ravel()
        lam = 0.5 * (s + 1.0)
        n = self.x.size
        P = np.zeros((pts.size, n))
        rows = np.arange(pts.size)
        el = np.repeat(np.arange(n - 1), n_gauss)
        lt = np.tile(lam, n - 1)
        P[rows, el] = 1.0 - lt
        P[rows, el + 1] = lt
        return pts, wts, P

    def integral(self, test: TwoScaleTest):
        """``iint U psi rho dx dy``."""
        pts, wts, P = self._x_quadrature()
        Ux = P @ self.values
        return float(np.sum(wts[:, None] * test.psi(pts)[:, None] * Ux * test.rho(self.y)[None, :]) / self.M)

    def norm(self):
        pts, wts, P = self._x_quadrature()
        Ux = P @ self.values
        return math.sqrt(float(np.sum(wts[:, None] * Ux ** 2) / self.M))


def _periods_mesh(eps, n_el):
    r = eps * n_el
    if abs(r - round(r)) > 1e-9 * max(r, 1.0) or round(r) < 1:
        raise ConfigError(f"mesh with {n_el} elements is incompatible with eps={eps!r}")


def pairing(field, test: TwoScaleTest, eps, n_el=None, n_gauss=6):
    """``int_0^1 u_eps(x) psi(x) rho(x/eps) dx`` by element-wise Gauss quadrature.

    ``field`` is either a nodal P1 array on a uniform mesh of [0, 1] (whose
    element count must be a multiple of 1/eps periods, i.e. ``eps/h`` an
    integer) or a callable ``u(x)``, integrated on ``n_el`` elements
    (default: 64 per period).
    """
    if callable(field):
        if n_el is None:
            n = DEFAULT_CELLS_PER_PERIOD / eps
            n_el = int(round(n)) if abs(n - round(n)) < 1e-9 * n else int(math.ceil(n))
        f = field
        nodes = None
    else:
        nodes = np.asarray(field, dtype=float)
        n_el = nodes.size - 1
    _periods_mesh(eps, n_el)
    s, w = np.polynomial.legendre.leggauss(n_gauss)
    h = 1.0 / n_el
    xl = np.arange(n_el) * h
    pts = xl[:, None] + 0.5 * h * (s[None, :] + 1.0)
    if nodes is None:
        u = np.asarray(f(pts), dtype=float)
    else:
        lam = 0.5 * (s + 1.0)
        u = nodes[:-1, None] * (1.0 - lam) + nodes[1:, None] * lam
    vals = u * test.psi(pts) * test.rho(pts / eps)
    return float(0.5 * h * np.sum(vals * w[None, :]))


def pairing_trajectory(traj: Trajectory, test: TwoScaleTest, eps, which="u"):
    """Space-time pairing using the piecewise-constant interpolates of u and
    z and the piecewise-linear interpolate of w (time factor optional)."""
    k, m = traj.k, traj.m
    total = 0.0
    s, wq = np.polynomial.legendre.leggauss(3)
    for n in range(1, m + 1):
        ts = (n - 1) * k + 0.5 * k * (s + 1.0)
        tau = np.ones_like(ts) if test.time is None else np.asarray(test.time(ts), dtype=float)
        if which == "w":
            # linear in time: integrate each end value against its hat weight
            lam = 0.5 * (s + 1.0)
            a = pairing(traj.w[n - 1], test, eps)
            b = pairing(traj.w[n], test, eps)
            total += 0.5 * k * float(np.sum(wq * tau * ((1 - lam) * a + lam * b)))
        elif which == "u":
            total += 0.5 * k * float(np.sum(wq * tau)) * pairing(traj.u[n], test, eps)
        else:
            raise ConfigError("time pairings are provided for u and w")
    return total


def limit_pairing(limit, test: TwoScaleTest):
    """``iint U psi rho`` for a :class:`TwoScaleField` or a callable ``U(x, y)``."""
    if isinstance(limit, TwoScaleField):
        return limit.integral(test)
    return TwoScaleField.from_function(limit, nx=1025, M=128).integral(test)


@dataclass
class GapTable:
    rows: list  # (eps, test_id, pairing, limit, gap)

    def gaps(self, eps):
        return {r[1]: r[4] for r in self.rows if r[0] == eps}

    def max_gap(self, eps):
        return max(r[4] for r in self.rows if r[0] == eps)

    @property
    def eps_values(self):
        return sorted({r[0] for r in self.rows}, reverse=True)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            wr = csv.writer(fh)
            wr.writerow(["eps", "test", "pairing", "limit", "gap"])
            for r in sorted(self.rows, key=lambda r: (-r[0], r[1])):
                wr.writerow([repr(float(r[0])), r[1]] + [repr(float(v)) for v in r[2:]])


def twoscale_gap(sequence: dict, limit, tests: Optional[Sequence[TwoScaleTest]] = None) -> GapTable:
    """Gap ``|pairing(u_eps, test) - iint limit * test|`` for every eps and test.

    ``sequence`` maps eps to a nodal array or a callable ``u_eps(x)``.
    """
    tests = default_family() if tests is None else list(tests)
    lim = {t.id: limit_pairing(limit, t) for t in tests}
    rows = []
    for eps in sorted(sequence, reverse=True):
        for t in tests:
            p = pairing(sequence[eps], t, eps)
            rows.append((float(eps), t.id, p, lim[t.id], abs(p - lim[t.id])))
    return GapTable(rows)


def unfold(field, eps, M=32, n_el=None) -> TwoScaleField:
    """Unfolded field ``U[c, j] = u(c eps + eps y_j)`` on whole cells only.

    ``field`` is a nodal P1 array (with ``eps/h`` an integer) or a callable.
    """
    if callable(field):
        f = field
    else:
        nodes = np.asarray(field, dtype=float)
        n = nodes.size - 1
        r = eps * n
        if abs(r - round(r)) > 1e-9 * max(r, 1.0):
            raise ConfigError(f"unfolding needs eps/h integer, got {r!r}")
        xs = np.linspace(0.0, 1.0, n + 1)

        def f(x):
            return np.interp(x, xs, nodes)
    n_cells = int(math.floor(1.0 / eps + 1e-9))
    y = (np.arange(M) + 0.5) / M
    c = np.arange(n_cells)
    X = eps * (c[:, None] + y[None, :])
    return TwoScaleField(eps * (c + 0.5), np.asarray(f(X), dtype=float), x_kind="cells", width=eps)


def unfolding_defect(field, eps, M=32, n_quad=4096):
    """``(| ||unfold u|| - ||u||_{L2(0,1)} |, bound)`` with the boundary-cell bound.

    The discarded part of the domain has volume ``vol = 1 - n_cells * eps``
    and contributes at most ``sqrt(vol) * max|u|`` to the norm.
    """
    U = unfold(field, eps, M)
    if callable(field):
        xs = np.linspace(0.0, 1.0, n_quad + 1)
        u = np.asarray(field(xs), dtype=float)
    else:
        u = np.asarray(field, dtype=float)
        xs = np.linspace(0.0, 1.0, u.size)
    # exact L2 norm of the P1 interpolant
    hx = np.diff(xs)
    full = math.sqrt(float(np.sum(hx / 3.0 * (u[:-1] ** 2 + u[:-1] * u[1:] + u[1:] ** 2))))
    vol = max(0.0, 1.0 - U.x.size * eps)
    bound = math.sqrt(vol) * float(np.max(np.abs(u)))
    return abs(U.norm() - full), bound


def corrector_error(traj_eps: Trajectory, u_hom: Trajectory, law: EffectiveLaw, eps):
    """``|| d_x u_eps - (d_x u_hom + d_y u_1)(., ./eps) ||`` in ``L2(Omega_T)``.

    ``d_y u_1(x, y)`` is the tabulated cell corrector at ``xi = d_x u_hom(x)``
    (linear in xi between table entries), read in the cell that contains
    ``y``.  ``d_x u_hom`` is averaged over each element of the eps-mesh.
    """
    if traj_eps.m != u_hom.m:
        raise ConfigError("trajectories must share the time grid")
    n_el = traj_eps.x.size - 1
    _periods_mesh(eps, n_el)
    Np = int(round(eps * n_el))
    h = traj_eps.h
    y = (np.mod(np.arange(n_el), Np) + 0.5) / Np
    if law.correctors is None:
        raise ConfigError("the effective law carries no cell correctors")
    Mc = law.correctors.shape[1]
    cell = np.minimum((y * Mc).astype(int), Mc - 1)
    total = 0.0
    for n in range(1, traj_eps.m + 1):
        g_eps = np.diff(traj_eps.u[n]) / h
        uh = np.interp(traj_eps.x, u_hom.x, u_hom.u[n])
        xi = np.diff(uh) / h
        v = law.corrector(xi)[np.arange(n_el), cell]
        total += traj_eps.k * h * float(np.sum((g_eps - xi - v) ** 2))
    return math.sqrt(total)
