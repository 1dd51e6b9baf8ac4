"""Representative functions of monotone operators and null-minimization residuals.

Two representatives are provided:

* the Fitzpatrick function of a sampled monotone graph, evaluated as a finite
  maximum over the samples (a lower bound of the continuum function that is
  exact on the sampled points), and
* the Fenchel function ``phi(v) + phi*(v')`` of a subdifferential.

``nullmin_residual(rep, v, v') = rep(v, v') - <v', v>`` is nonnegative and
vanishes exactly when ``v'`` belongs to the operator at ``v``; it is the
pointwise certificate used by the evolver.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .convexcore import ConjugatePair, Potential, subdifferential_interval
from .errors import ConsistencyError, DomainError, MonotonicityError

DEFAULT_TOL = 1e-12
_CHUNK = 4096


def pairing(a, b, dim=1):
    """Duality pairing <a, b>; for ``dim=2`` the last axis is the vector axis."""
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    if dim == 2:
        return a[..., 0] * b[..., 0] + a[..., 1] * b[..., 1]
    return a * b


def _monotonicity_violation(v, w, tol):
    """First index pair (i, j) with (w_i - w_j)(v_i - v_j) < -tol, or None."""
    n = v.shape[0]
    if v.ndim == 1:
        order = np.argsort(v, kind="stable")
        vs, ws = v[order], w[order]
        # within equal-v groups any w is fine; across groups w must not drop
        uniq, start = np.unique(vs, return_index=True)
        if uniq.size < 2:
            return None
        gmax = np.maximum.reduceat(ws, start)
        gmin = np.minimum.reduceat(ws, start)
        run_max = np.maximum.accumulate(gmax)
        bad = np.nonzero(gmin[1:] < run_max[:-1] - tol * (1 + np.abs(run_max[:-1])))[0]
        if bad.size == 0:
            return None
        g = int(bad[0]) + 1
        j_local = start[g] + int(np.argmin(ws[start[g]:start[g + 1] if g + 1 < start.size else None]))
        jg = int(np.argmax(gmax[:g]))
        i_local = start[jg] + int(np.argmax(ws[start[jg]:start[jg + 1]]))
        return int(order[i_local]), int(order[j_local])
    for s in range(0, n, _CHUNK):
        dv = v[s:s + _CHUNK, None, :] - v[None, :, :]
        dw = w[s:s + _CHUNK, None, :] - w[None, :, :]
        prod = np.sum(dv * dw, axis=-1)
        bad = np.argwhere(prod < -tol)
        if bad.size:
            i, j = bad[0]
            return int(i + s), int(j)
    return None


@dataclass(frozen=True, eq=False)
class MonotoneGraph:
    """Finite sample ``{(v_i, w_i)}`` of the graph of a monotone operator."""

    v: np.ndarray
    w: np.ndarray
    potential: Optional[Potential] = None
    y: Optional[float] = None
    k: Optional[float] = None
    tol: float = DEFAULT_TOL
    name: str = "graph"

    def __post_init__(self):
        v = np.array(self.v, dtype=float)
        w = np.array(self.w, dtype=float)
        if v.shape[0] == 0:
            raise DomainError("monotone graph needs at least one sample")
        if v.shape != w.shape or v.ndim not in (1, 2) or (v.ndim == 2 and v.shape[1] != 2):
            raise DomainError("graph samples must be matching arrays of shape (n,) or (n, 2)")
        pair = _monotonicity_violation(v, w, self.tol)
        if pair is not None:
            i, j = pair
            raise MonotonicityError(f"{self.name}: samples {i} and {j} violate monotonicity "
                                    f"(v={v[i]}, {v[j]}; w={w[i]}, {w[j]})", pair=pair)
        if self.potential is not None and v.ndim == 1:
            lo, hi = subdifferential_interval(self.potential, v)
            tol = 1e-9 * (1 + np.abs(w))
            if np.any(w < lo - tol) or np.any(w > hi + tol):
                i = int(np.argmax(np.maximum(lo - w, w - hi)))
                raise DomainError(f"{self.name}: sample {i} is not a subgradient of the potential")
        v.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "v", v)
        object.__setattr__(self, "w", w)
        if self.k is None:
            nv = np.linalg.norm(v, axis=-1) if v.ndim == 2 else np.abs(v)
            nw = np.linalg.norm(w, axis=-1) if w.ndim == 2 else np.abs(w)
            object.__setattr__(self, "k", float(np.max(nw / (1.0 + nv))))

    @property
    def dim(self):
        return 1 if self.v.ndim == 1 else 2

    def __len__(self):
        return self.v.shape[0]

    @classmethod
    def from_potential(cls, pot: Potential, v=None, selection="both"):
        """Sample ``graph(d pot)``; ``selection='both'`` keeps both one-sided slopes."""
        v = pot.grid if v is None else np.asarray(v, dtype=float)
        lo, hi = subdifferential_interval(pot, v)
        lo, hi = np.atleast_1d(lo), np.atleast_1d(hi)
        if selection == "left":
            vv, ww = v, lo
        elif selection == "right":
            vv, ww = v, hi
        elif selection == "mid":
            vv, ww = v, 0.5 * (lo + hi)
        else:
            kink = hi > lo
            vv = np.concatenate([v, v[kink]])
            ww = np.concatenate([lo, hi[kink]])
            order = np.lexsort((ww, vv))
            vv, ww = vv[order], ww[order]
        return cls(vv, ww, potential=pot, y=pot.y, name=f"d[{pot.name}]")

    @classmethod
    def from_material(cls, material, v, y=0.0):
        """Graph of the subdifferential of a preset family at cell coordinate ``y``."""
        v = np.asarray(v, dtype=float)
        lo, hi = material.slope_interval(v, y)
        lo = np.broadcast_to(lo, v.shape)
        hi = np.broadcast_to(hi, v.shape)
        kink = hi > lo
        vv = np.concatenate([v, v[kink]])
        ww = np.concatenate([lo, hi[kink]])
        order = np.lexsort((ww, vv))
        return cls(vv[order], ww[order], y=y, name=f"d[{material.spec}]")

    @classmethod
    def from_linear_map(cls, A, magnitudes, n_directions=16):
        """2-d graph of ``v -> A v`` on a product grid of directions and magnitudes."""
        ang = 2 * np.pi * np.arange(n_directions) / n_directions
        dirs = np.stack([np.cos(ang), np.sin(ang)], axis=-1)
        mags = np.asarray(magnitudes, dtype=float)
        v = (mags[:, None, None] * dirs[None, :, :]).reshape(-1, 2)
        v = np.unique(np.round(v, 15), axis=0)
        w = v @ np.asarray(A, dtype=float).T
        return cls(v, w, name="linear-map")


@dataclass(frozen=True, eq=False)
class RepresentativeFn:
    """A representative function of a monotone operator.

    ``kind`` is ``"fitzpatrick"`` (finite max over ``graph``) or ``"fenchel"``
    (``pair.primal + pair.dual``).
    """

    kind: str
    graph: Optional[MonotoneGraph] = None
    pair: Optional[ConjugatePair] = None
    tol: float = DEFAULT_TOL
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind == "fitzpatrick" and self.graph is None:
            raise ValueError("fitzpatrick representative needs a graph")
        if self.kind == "fenchel" and self.pair is None:
            raise ValueError("fenchel representative needs a conjugate pair")
        if self.kind not in ("fitzpatrick", "fenchel"):
            raise ValueError(f"unknown representative kind {self.kind!r}")

    @classmethod
    def fitzpatrick(cls, graph, tol=DEFAULT_TOL):
        return cls("fitzpatrick", graph=graph, tol=tol)

    @classmethod
    def fenchel(cls, pair_or_potential, dual_grid=None, tol=DEFAULT_TOL):
        pair = pair_or_potential
        if isinstance(pair, Potential):
            pair = ConjugatePair.from_potential(pair, dual_grid)
        return cls("fenchel", pair=pair, tol=tol)

    @property
    def dim(self):
        return self.graph.dim if self.graph is not None else 1

    def evaluate(self, v, vp):
        """Value and clipped mask at ``(v, vp)``."""
        if self.kind == "fitzpatrick":
            val = fitzpatrick_eval(self.graph, v, vp)
            return val, np.zeros(np.shape(val), dtype=bool)
        return fenchel_rep_eval(self.pair, v, vp)

    def __call__(self, v, vp):
        return self.evaluate(v, vp)[0]


def fitzpatrick_eval(graph: MonotoneGraph, v, vp):
    """Sampled Fitzpatrick function ``max_i <v', v_i> - <w_i, v_i - v>``."""
    v = np.asarray(v, dtype=float)
    vp = np.asarray(vp, dtype=float)
    vec = graph.dim == 2
    qshape = v.shape[:-1] if vec else v.shape
    vq = v.reshape(-1, 2) if vec else v.reshape(-1)
    vpq = vp.reshape(-1, 2) if vec else vp.reshape(-1)
    out = np.empty(vq.shape[0])
    gv, gw = graph.v, graph.w
    for s in range(0, vq.shape[0], _CHUNK):
        a = vq[s:s + _CHUNK, None]
        b = vpq[s:s + _CHUNK, None]
        d = graph.dim
        terms = pairing(b, gv[None], d) - pairing(gw[None], gv[None] - a, d)
        out[s:s + _CHUNK] = terms.max(axis=1)
    out = out.reshape(qshape)
    return float(out) if out.ndim == 0 else out


def fenchel_rep_eval(pair: ConjugatePair, v, vp):
    """Fenchel representative ``phi(v) + phi*(v')`` and the clipped flag of ``v'``."""
    v = np.asarray(v, dtype=float)
    vp = np.asarray(vp, dtype=float)
    dual, clipped = pair.dual_value(vp)
    val = pair.primal(v) + dual
    if np.ndim(val) == 0:
        return float(val), bool(clipped)
    return val, np.asarray(clipped)


def nullmin_residual(rep: RepresentativeFn, v, vp):
    """``rep(v, v') - <v', v>``; raises when it is negative beyond ``rep.tol``."""
    val = rep(v, vp)
    pv = pairing(vp, v, rep.dim)
    r = val - pv
    scale = 1.0 + np.abs(pv)
    if np.any(r < -rep.tol * scale):
        worst = float(np.min(r))
        raise ConsistencyError(f"null-minimization residual {worst!r} is below -tol; "
                               "the representative is sampled too coarsely")
    r = np.maximum(r, 0.0)
    return float(r) if np.ndim(r) == 0 else r


def representativeness_scan(rep: RepresentativeFn, v, vp):
    """Largest violation ``<v', v> - rep(v, v')`` over the given pairs."""
    return float(np.max(pairing(vp, v, rep.dim) - rep(v, vp)))


# -- CSV persistence -----------------------------------------------------------

def export_graph(graph: MonotoneGraph, path):
    cols = ["v", "w"] if graph.dim == 1 else ["v1", "v2", "w1", "w2"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(cols)
        data = np.column_stack([graph.v, graph.w]) if graph.dim == 1 else np.hstack([graph.v, graph.w])
        for row in data:
            writer.writerow([repr(float(x)) for x in row])


def import_graph(path) -> MonotoneGraph:
    with open(path, newline="") as fh:
        reader = csv.reader(row for row in fh if not row.startswith("#"))
        header = next(reader)
        data = np.array([[float(x) for x in row] for row in reader if row], dtype=float)
    if header == ["v", "w"]:
        return MonotoneGraph(data[:, 0], data[:, 1], name=str(path))
    if header == ["v1", "v2", "w1", "w2"]:
        return MonotoneGraph(data[:, :2], data[:, 2:], name=str(path))
    raise DomainError(f"unrecognised graph CSV header {header}")
