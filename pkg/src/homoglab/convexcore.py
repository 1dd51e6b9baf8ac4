"""Discrete convex analysis on the real line.

A :class:`Potential` is a convex function known either analytically (through a
preset family at a fixed cell coordinate ``y``) or by samples on a strictly
increasing grid.  Sampled potentials are read as their piecewise-linear
interpolant restricted to the grid hull, which makes the discrete conjugate,
the subdifferential and the Moreau envelope exact operations on that
interpolant.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import ConvexityError, DomainError
from .presets import Material, parse_material

SLOPE_TOL = 1e-12


def _as_array(x):
    arr = np.array(x, dtype=float)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Potential:
    """Convex potential phi(., y) sampled on ``grid`` (analytic or grid kind).

    ``clipped`` and ``argmax`` are only set on conjugates: a clipped node is a
    dual value whose supremum sits on the boundary of the primal grid, i.e.
    outside the effective domain of the true conjugate.
    """

    grid: np.ndarray
    values: np.ndarray
    p: float = 2.0
    kind: str = "grid"
    name: str = "sampled"
    y: Optional[float] = None
    material: Optional[Material] = None
    clipped: Optional[np.ndarray] = None
    argmax: Optional[np.ndarray] = None
    c1: Optional[float] = None
    c2: Optional[float] = None
    evaluator: Optional[Callable] = field(default=None, repr=False)
    slope_evaluator: Optional[Callable] = field(default=None, repr=False)

    def __post_init__(self):
        grid = _as_array(self.grid)
        values = _as_array(self.values)
        if grid.ndim != 1 or grid.size == 0:
            raise DomainError("potential grid must be a nonempty 1-d array")
        if values.shape != grid.shape:
            raise DomainError("grid and values differ in length")
        if np.any(np.diff(grid) <= 0):
            raise DomainError("potential grid must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise DomainError("potential values must be finite on the grid")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "values", values)
        if self.clipped is not None:
            object.__setattr__(self, "clipped", np.array(self.clipped, dtype=bool))

    # -- construction -------------------------------------------------------
    @classmethod
    def from_preset(cls, spec, y=0.0, R=4.0, n=801, p=None):
        """Sample an analytic preset at cell coordinate ``y`` on ``[-R, R]``."""
        mat = parse_material(spec, p=p)
        grid = np.linspace(-R, R, n)
        return cls(grid, mat.value(grid, y), p=mat.p, kind="analytic", name=mat.spec,
                   y=float(y), material=mat, c1=mat.c1, c2=mat.c2)

    @classmethod
    def from_function(cls, fun, grid, name="sampled", p=2.0):
        grid = np.asarray(grid, dtype=float)
        return cls(grid, fun(grid), p=p, name=name)

    # -- evaluation ---------------------------------------------------------
    @property
    def lo(self):
        return float(self.grid[0])

    @property
    def hi(self):
        return float(self.grid[-1])

    @property
    def slopes(self):
        return np.diff(self.values) / np.diff(self.grid)

    def contains(self, v):
        v = np.asarray(v, dtype=float)
        return (v >= self.lo) & (v <= self.hi)

    def _check_domain(self, v):
        if self.kind == "analytic":
            return
        if not np.all(self.contains(v)):
            bad = np.asarray(v, dtype=float)[~self.contains(v)]
            raise DomainError(f"{self.name}: evaluation at {bad.flat[0]!r} outside "
                              f"grid hull [{self.lo!r}, {self.hi!r}]")

    def __call__(self, v):
        self._check_domain(v)
        if self.evaluator is not None:
            return self.evaluator(np.asarray(v, dtype=float))
        if self.material is not None:
            return self.material.value(np.asarray(v, dtype=float), self.y)
        return np.interp(v, self.grid, self.values)

    def check_convex(self, tol=SLOPE_TOL):
        """Raise :class:`ConvexityError` at the first decreasing slope pair."""
        s = self.slopes
        if s.size < 2:
            return
        scale = tol * (1.0 + np.abs(s[:-1]) + np.abs(s[1:]))
        bad = np.nonzero(s[1:] < s[:-1] - scale)[0]
        if bad.size:
            i = int(bad[0]) + 1
            raise ConvexityError(
                f"{self.name}: slopes decrease at nodes {i - 1},{i},{i + 1} "
                f"(v={self.grid[i - 1]!r},{self.grid[i]!r},{self.grid[i + 1]!r}; "
                f"slopes {s[i - 1]!r} > {s[i]!r})", index=(i - 1, i, i + 1))

    def is_clipped(self, w):
        """Clipped flag for arbitrary dual points (conjugates only)."""
        if self.clipped is None:
            return np.zeros(np.shape(w), dtype=bool)
        if self.evaluator is not None and hasattr(self.evaluator, "clipped"):
            return self.evaluator.clipped(np.asarray(w, dtype=float))
        return np.interp(w, self.grid, self.clipped.astype(float)) > 0

    def at(self, y):
        """The same analytic family frozen at another cell coordinate."""
        if self.material is None:
            raise DomainError("only analytic potentials carry a y-dependence")
        return Potential(self.grid, self.material.value(self.grid, y), p=self.p, kind="analytic",
                         name=self.name, y=float(y), material=self.material, c1=self.c1, c2=self.c2)


class _DiscreteConjugate:
    """Exact conjugate of a piecewise-linear convex function, at any dual point."""

    def __init__(self, v, f):
        self.v, self.f = v, f
        self.s = np.diff(f) / np.diff(v)

    def index(self, w):
        # smallest maximizing index: number of slopes strictly below w
        return np.searchsorted(self.s, w, side="left")

    def __call__(self, w):
        i = self.index(w)
        return w * self.v[i] - self.f[i]

    def clipped(self, w):
        if self.s.size == 0:
            return np.ones(np.shape(w), dtype=bool)
        return (w < self.s[0]) | (w > self.s[-1])


def conjugate(pot: Potential, dual_grid) -> Potential:
    """Discrete Legendre transform ``w -> max_i { w v_i - phi(v_i) }``.

    The maximizing node for each dual value is read off the ordered primal
    slopes: node ``i`` is optimal for every ``w`` between the slopes of its two
    neighbouring segments, so no inner maximization loop is needed.  Ties are
    broken toward the smallest index.

    Parameters
    ----------
    pot : Potential
        Convex potential; only its grid samples are used.
    dual_grid : array_like
        Strictly increasing dual abscissae.

    Returns
    -------
    Potential
        Sampled conjugate with ``clipped`` flags and the maximizing primal
        abscissae in ``argmax``.  Off-grid evaluation stays exact.
    """
    dual_grid = np.asarray(dual_grid, dtype=float)
    if dual_grid.size == 0 or pot.grid.size == 0:
        raise DomainError("conjugate needs nonempty primal and dual grids")
    pot.check_convex()
    conj = _DiscreteConjugate(pot.grid, pot.values)
    idx = conj.index(dual_grid)
    q = pot.p / (pot.p - 1.0) if pot.p > 1 else np.inf
    return Potential(dual_grid, conj(dual_grid), p=q, kind="grid", name=f"conj[{pot.name}]",
                     y=pot.y, clipped=conj.clipped(dual_grid), argmax=pot.grid[idx],
                     evaluator=conj)


def subdifferential_interval(pot: Potential, v):
    """Left and right slopes ``(w_minus, w_plus)`` of ``pot`` at ``v``.

    Analytic potentials use the preset's one-sided derivatives.  Sampled
    potentials use the neighbouring segment slopes; at the two hull endpoints
    the single available one-sided slope is returned for both ends.
    """
    v_arr = np.asarray(v, dtype=float)
    if pot.kind != "analytic" and not np.all(pot.contains(v_arr)):
        raise DomainError(f"{pot.name}: subdifferential requested outside the grid hull")
    if pot.material is not None and pot.evaluator is None:
        lo, hi = pot.material.slope_interval(v_arr, pot.y)
    elif pot.slope_evaluator is not None:
        lo = hi = pot.slope_evaluator(v_arr)
    else:
        s = pot.slopes
        if s.size == 0:
            lo = hi = np.zeros_like(v_arr)
        else:
            n = pot.grid.size
            left = np.searchsorted(pot.grid, v_arr, side="left")   # first node >= v
            right = np.searchsorted(pot.grid, v_arr, side="right")  # first node > v
            on_node = left < right
            # segment index to the left / right of v
            seg_l = np.clip(left - 1, 0, n - 2)
            seg_r = np.clip(np.where(on_node, left, left - 1), 0, n - 2)
            lo, hi = s[seg_l], s[seg_r]
    if np.ndim(v) == 0:
        return float(lo), float(hi)
    return np.asarray(lo), np.asarray(hi)


class _PLMoreau:
    """Exact Moreau envelope of a piecewise-linear convex function on its hull."""

    def __init__(self, v, f, lam):
        self.v, self.f, self.lam = v, f, lam
        s = np.diff(f) / np.diff(v)
        self.s = s
        # zone boundaries: node j owns [v_j + lam s_{j-1}, v_j + lam s_j],
        # segment j owns (v_j + lam s_j, v_{j+1} + lam s_j)
        b = np.empty(2 * s.size)
        b[0::2] = v[:-1] + lam * s
        b[1::2] = v[1:] + lam * s
        self.b = b

    def prox(self, x):
        if self.s.size == 0:
            return np.full(np.shape(x), self.v[0]), np.zeros(np.shape(x), dtype=int)
        z = np.searchsorted(self.b, x, side="left")
        seg = np.minimum(z // 2, self.s.size - 1)
        on_seg = (z % 2) == 1
        node = z // 2
        P = np.where(on_seg, x - self.lam * self.s[seg], self.v[np.minimum(node, self.v.size - 1)])
        return P, seg

    def __call__(self, x):
        P, _ = self.prox(x)
        fP = np.interp(P, self.v, self.f)
        return fP + (x - P) ** 2 / (2.0 * self.lam)

    def slope(self, x):
        P, _ = self.prox(x)
        return (x - P) / self.lam


def moreau_smooth(pot: Potential, lam: float) -> Potential:
    """Infimal convolution of ``pot`` with ``|.|^2 / (2 lam)``.

    The result has a ``1/lam``-Lipschitz derivative and lies below ``pot``.
    """
    if not lam > 0:
        raise ValueError(f"smoothing parameter must be positive, got {lam!r}")
    if pot.kind == "analytic" and pot.material is not None:
        mat, y = pot.material, pot.y

        def ev(x):
            return mat.moreau(x, y, lam)[0]

        def sl(x):
            return mat.moreau(x, y, lam)[1]
    else:
        pot.check_convex()
        env = _PLMoreau(pot.grid, pot.values, lam)
        ev, sl = env, env.slope
    return Potential(pot.grid, ev(pot.grid), p=2.0, kind=pot.kind, name=f"moreau[{pot.name},{lam!r}]",
                     y=pot.y, evaluator=ev, slope_evaluator=sl)


@dataclass(frozen=True, eq=False)
class ConjugatePair:
    """A potential with its sampled conjugate and the dual coercivity constants."""

    primal: Potential
    dual: Potential
    L: Optional[float] = None
    M: Optional[float] = None

    @classmethod
    def from_potential(cls, pot: Potential, dual_grid=None):
        if dual_grid is None:
            s = pot.slopes
            lo, hi = (s.min(), s.max()) if s.size else (-1.0, 1.0)
            if hi - lo <= 1e-12 * (1.0 + abs(lo)):
                lo, hi = lo - 1.0, hi + 1.0
            dual_grid = np.linspace(lo, hi, max(pot.grid.size, 3))
        dual = conjugate(pot, dual_grid)
        if pot.material is not None:
            mat = pot.material
            exact = Potential(dual.grid, mat.conj(dual.grid, pot.y)[0], p=dual.p, kind="analytic",
                              name=f"conj[{pot.name}]", y=pot.y, material=mat.dual(),
                              clipped=mat.conj(dual.grid, pot.y)[1])
            return cls(pot, exact, mat.L, mat.M)
        return cls(pot, dual)

    def dual_value(self, w):
        """Conjugate value and clipped flag at ``w``."""
        w = np.asarray(w, dtype=float)
        if self.primal.material is not None:
            val, clip = self.primal.material.conj(w, self.primal.y)
            return val, clip
        if self.dual.evaluator is not None:
            # the discrete Legendre transform is exact off its sampling grid
            return self.dual.evaluator(w), self.dual.is_clipped(w)
        return self.dual(w), self.dual.is_clipped(w)

    def young_gap(self, v, w):
        """phi(v) + phi*(w) - v w (nonnegative by Fenchel-Young)."""
        val, _ = self.dual_value(w)
        return self.primal(v) + val - np.asarray(v) * np.asarray(w)

    def coercivity_violation(self):
        """max over the dual grid of ``L w^2 - M - phi*(w)`` (<= 0 when the bound holds)."""
        if self.L is None or self.M is None:
            return None
        w = self.dual.grid
        val, clip = self.dual_value(w)
        ok = ~np.asarray(clip)
        if not np.any(ok):
            return None
        return float(np.max(self.L * w[ok] ** 2 - self.M - val[ok]))


# -- CSV persistence -----------------------------------------------------------

def export_potential(pot: Potential, path):
    with open(path, "w", newline="") as fh:
        fh.write(f"# name = {pot.name}\n# p = {pot.p!r}\n")
        writer = csv.writer(fh)
        writer.writerow(["v", "phi"])
        for v, f in zip(pot.grid, pot.values):
            writer.writerow([repr(float(v)), repr(float(f))])


def import_potential(path) -> Potential:
    meta, rows = {}, []
    with open(path, newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                key, _, val = line[1:].partition("=")
                meta[key.strip()] = val.strip()
                continue
            if line.strip() and not line.startswith("v"):
                rows.append([float(t) for t in line.split(",")])
    arr = np.array(rows, dtype=float).reshape(-1, 2)
    return Potential(arr[:, 0], arr[:, 1], p=float(meta.get("p", 2.0)), name=meta.get("name", "sampled"))
