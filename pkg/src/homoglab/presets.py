"""Analytic preset families: convex potentials phi(v, y), flux sources, initial data.

Every family is vectorized in both the state ``v`` and the cell coordinate
``y`` (only the first cell coordinate matters; layered media vary along it).
Preset strings follow ``name(arg, ...)``, e.g. ``two-phase(1,4,0.5)``.
"""
from __future__ import annotations

import math
import re

import numpy as np

from .errors import ConfigError

_SPEC_RE = re.compile(r"^\s*([A-Za-z][\w\-]*)\s*(?:\((.*)\))?\s*$")


def parse_spec(spec):
    """Split ``"name(a, b)"`` into ``("name", [a, b])`` with float arguments."""
    m = _SPEC_RE.match(spec)
    if m is None:
        raise ConfigError(f"malformed preset string {spec!r}")
    name, argtext = m.group(1).lower(), m.group(2)
    args = []
    if argtext and argtext.strip():
        try:
            args = [float(_frac(tok)) for tok in argtext.split(",")]
        except ValueError as exc:
            raise ConfigError(f"bad argument in preset {spec!r}: {exc}") from None
    return name, args


def _frac(tok):
    tok = tok.strip()
    if "/" in tok:
        num, den = tok.split("/")
        return float(num) / float(den)
    return float(tok)


def _fmt(x):
    return repr(float(x))


def cell_phase(y, theta):
    """Boolean mask of the first phase, ``frac(y) < theta`` (half-open layers)."""
    y = np.asarray(y, dtype=float)
    return np.mod(y, 1.0) < theta


class Material:
    """Base class for y-dependent convex potentials on the real line.

    Subclasses implement ``value``, ``slope_interval``, ``curvature``, ``conj``,
    ``conj_slope`` and ``prox``. ``kinks`` lists the abscissae where the
    potential is not differentiable (identical for every y).
    """

    p = 2.0
    kinks: tuple = ()
    homogeneous = True
    spec = "material"
    # growth/coercivity constants; None when the family has none in that form
    c1 = c2 = None
    L = M = None
    k = a = b = None

    @property
    def smooth(self):
        return not self.kinks

    def __repr__(self):
        return f"<{type(self).__name__} {self.spec}>"

    def __str__(self):
        return self.spec

    def value(self, v, y=0.0):
        raise NotImplementedError

    def slope_interval(self, v, y=0.0):
        raise NotImplementedError

    def slope(self, v, y=0.0):
        """A single-valued selection of the subdifferential (lower endpoint)."""
        return self.slope_interval(v, y)[0]

    def curvature(self, v, y=0.0):
        raise NotImplementedError

    def conj(self, w, y=0.0):
        """Conjugate value and clipped mask; clipped points carry the value at
        the nearest point of the effective domain."""
        raise NotImplementedError

    def conj_slope(self, w, y=0.0):
        raise NotImplementedError

    def prox(self, v, y, mu):
        raise NotImplementedError

    def moreau(self, v, y, mu):
        """Moreau envelope with parameter ``mu``: value, first and second derivative."""
        v = np.asarray(v, dtype=float)
        P = self.prox(v, y, mu)
        val = self.value(P, y) + (v - P) ** 2 / (2.0 * mu)
        d1 = (v - P) / mu
        at_kink = np.zeros(P.shape, dtype=bool)
        for c in self.kinks:
            at_kink |= P == c
        curv = np.where(at_kink, 0.0, self.curvature(np.where(at_kink, P + 1.0, P), y))
        dP = np.where(at_kink, 0.0, 1.0 / (1.0 + mu * curv))
        d2 = (1.0 - dP) / mu
        return val, d1, d2

    def averaged(self):
        """Homogeneous family with the cell-averaged potential (y-free states)."""
        if self.homogeneous:
            return self
        raise NotImplementedError

    def dual(self):
        return ConjugateMaterial(self)

    def phases(self, y):
        """Integer label of the material phase at ``y`` (0 for homogeneous media)."""
        return np.zeros(np.shape(y), dtype=int)


class PowerLaw(Material):
    """phi(v, y) = a(y) |v|^p / p with a two-phase layered coefficient."""

    def __init__(self, a1, a2=None, theta=1.0, p=2.0, spec=None):
        a2 = a1 if a2 is None else a2
        if a1 <= 0 or a2 <= 0:
            raise ConfigError("power-law coefficients must be positive")
        if not 0.0 < theta <= 1.0:
            raise ConfigError("layer fraction must lie in (0, 1]")
        if p <= 1.0:
            raise ConfigError("growth exponent must exceed 1")
        self.a1, self.a2, self.theta, self.p = float(a1), float(a2), float(theta), float(p)
        self.homogeneous = a1 == a2 or theta == 1.0
        self.q = self.p / (self.p - 1.0)
        self.spec = spec or self._default_spec()
        amax, amin = max(a1, a2), min(a1, a2)
        if self.p == 2.0:
            self.c1, self.c2 = amax / 2.0, 0.0
            self.L, self.M = 1.0 / (2.0 * amax), 0.0
            self.k = amax
            self.a = min(a / (a * a + 1.0) for a in (a1, a2))
            self.b = 0.0
        if self.p < 2.0:
            self.kinks = (0.0,)  # curvature blows up at 0; smoothed like a kink

    def _default_spec(self):
        if self.homogeneous:
            if self.p == 2.0:
                return f"quadratic({_fmt(self.a1)})"
            return f"power({_fmt(self.a1)},{_fmt(self.p)})"
        s = f"two-phase({_fmt(self.a1)},{_fmt(self.a2)},{_fmt(self.theta)}"
        return s + (")" if self.p == 2.0 else f",{_fmt(self.p)})")

    def coeff(self, y):
        if self.homogeneous:
            return np.full(np.shape(y), self.a1)
        return np.where(cell_phase(y, self.theta), self.a1, self.a2)

    def phases(self, y):
        if self.homogeneous:
            return np.zeros(np.shape(y), dtype=int)
        return np.where(cell_phase(y, self.theta), 0, 1)

    def value(self, v, y=0.0):
        v = np.asarray(v, dtype=float)
        return self.coeff(y) * np.abs(v) ** self.p / self.p

    def slope_interval(self, v, y=0.0):
        v = np.asarray(v, dtype=float)
        s = self.coeff(y) * np.abs(v) ** (self.p - 1.0) * np.sign(v)
        return s, s

    def curvature(self, v, y=0.0):
        v = np.asarray(v, dtype=float)
        a = self.coeff(y)
        if self.p == 2.0:
            return a * np.ones_like(v)
        with np.errstate(divide="ignore"):
            return a * (self.p - 1.0) * np.abs(v) ** (self.p - 2.0)

    def conj(self, w, y=0.0):
        w = np.asarray(w, dtype=float)
        a = self.coeff(y)
        val = a ** (-1.0 / (self.p - 1.0)) * np.abs(w) ** self.q / self.q
        return val, np.zeros(np.broadcast(w, a).shape, dtype=bool)

    def conj_slope(self, w, y=0.0):
        w = np.asarray(w, dtype=float)
        return (np.abs(w) / self.coeff(y)) ** (1.0 / (self.p - 1.0)) * np.sign(w)

    def prox(self, v, y, mu):
        v = np.asarray(v, dtype=float)
        a = np.broadcast_to(self.coeff(y), v.shape)
        if self.p == 2.0:
            return v / (1.0 + mu * a)
        # P + mu a |P|^(p-1) sgn P = v has its root between 0 and v
        lo = np.minimum(v, 0.0)
        hi = np.maximum(v, 0.0)
        P = 0.5 * (lo + hi)
        for _ in range(200):
            g = P + mu * a * np.abs(P) ** (self.p - 1.0) * np.sign(P) - v
            lo = np.where(g < 0, P, lo)
            hi = np.where(g > 0, P, hi)
            dg = 1.0 + mu * a * (self.p - 1.0) * np.abs(P) ** (self.p - 2.0) if self.p >= 2 else None
            if dg is not None:
                Pn = P - g / dg
                bad = (Pn <= lo) | (Pn >= hi) | ~np.isfinite(Pn)
                Pn = np.where(bad, 0.5 * (lo + hi), Pn)
            else:
                Pn = 0.5 * (lo + hi)
            if np.all(np.abs(Pn - P) <= 1e-15 * (1.0 + np.abs(v))):
                P = Pn
                break
            P = Pn
        return P

    def averaged(self):
        if self.homogeneous:
            return self
        a_mean = self.theta * self.a1 + (1.0 - self.theta) * self.a2
        return PowerLaw(a_mean, p=self.p)

    def dual(self):
        e = -1.0 / (self.p - 1.0)
        return PowerLaw(self.a1 ** e, self.a2 ** e, self.theta, self.q)


class AbsValue(Material):
    """phi(v) = c |v|; the conjugate is the indicator of [-c, c]."""

    kinks = (0.0,)

    def __init__(self, c=1.0, spec=None):
        if c <= 0:
            raise ConfigError("abs scale must be positive")
        self.cscale = float(c)
        self.p = 1.0
        self.spec = spec or ("abs" if c == 1.0 else f"abs({_fmt(c)})")
        self.c1 = self.c2 = c / 2.0
        self.L, self.M = 1.0, c * c

    def value(self, v, y=0.0):
        v = np.asarray(v, dtype=float)
        return self.cscale * np.abs(v) + np.zeros(np.shape(y))

    def slope_interval(self, v, y=0.0):
        v = np.asarray(v, dtype=float) + np.zeros(np.shape(y))
        c = self.cscale
        lo = np.where(v > 0, c, -c)
        hi = np.where(v < 0, -c, c)
        return lo, hi

    def curvature(self, v, y=0.0):
        return np.zeros(np.broadcast(np.asarray(v, dtype=float), np.asarray(y)).shape)

    def conj(self, w, y=0.0):
        w = np.asarray(w, dtype=float) + np.zeros(np.shape(y))
        # a few ulps of slack: smoothed selections land on +-c up to rounding
        return np.zeros_like(w), np.abs(w) > self.cscale * (1.0 + 8 * np.finfo(float).eps)

    def conj_slope(self, w, y=0.0):
        return np.zeros(np.broadcast(np.asarray(w, dtype=float), np.asarray(y)).shape)

    def prox(self, v, y, mu):
        v = np.asarray(v, dtype=float) + np.zeros(np.shape(y))
        return np.sign(v) * np.maximum(np.abs(v) - mu * self.cscale, 0.0)


class PhaseChange(Material):
    """Two-phase (Stefan-type) enthalpy potential with latent heat ``latent``.

    phi(v) = a1 v^2/2 for v < 0 and a2 v^2/2 + latent * v for v >= 0, so the
    subdifferential jumps from 0 to ``latent`` at the phase-change value 0.
    """

    kinks = (0.0,)

    def __init__(self, a1, a2, latent, spec=None):
        if a1 <= 0 or a2 <= 0 or latent < 0:
            raise ConfigError("stefan preset needs a1, a2 > 0 and latent >= 0")
        self.a1, self.a2, self.latent = float(a1), float(a2), float(latent)
        self.spec = spec or f"stefan({_fmt(a1)},{_fmt(a2)},{_fmt(latent)})"
        amax = max(a1, a2)
        self.c1, self.c2 = amax / 2.0 + latent / 2.0, latent / 2.0
        self.L, self.M = 1.0 / (4.0 * amax), latent ** 2 / (2.0 * amax)

    def _shape(self, v, y):
        return np.asarray(v, dtype=float) + np.zeros(np.shape(y))

    def value(self, v, y=0.0):
        v = self._shape(v, y)
        return np.where(v < 0, 0.5 * self.a1 * v * v, 0.5 * self.a2 * v * v + self.latent * v)

    def slope_interval(self, v, y=0.0):
        v = self._shape(v, y)
        lo = np.where(v < 0, self.a1 * v, np.where(v == 0, 0.0, self.a2 * v + self.latent))
        hi = np.where(v < 0, self.a1 * v, self.a2 * v + self.latent)
        return lo, hi

    def curvature(self, v, y=0.0):
        v = self._shape(v, y)
        return np.where(v < 0, self.a1, self.a2)

    def conj(self, w, y=0.0):
        w = self._shape(w, y)
        val = np.where(w < 0, w * w / (2 * self.a1),
                       np.where(w <= self.latent, 0.0, (w - self.latent) ** 2 / (2 * self.a2)))
        return val, np.zeros(w.shape, dtype=bool)

    def conj_slope(self, w, y=0.0):
        w = self._shape(w, y)
        return np.where(w < 0, w / self.a1, np.where(w <= self.latent, 0.0, (w - self.latent) / self.a2))

    def prox(self, v, y, mu):
        v = self._shape(v, y)
        return np.where(v < 0, v / (1 + mu * self.a1),
                        np.where(v <= mu * self.latent, 0.0, (v - mu * self.latent) / (1 + mu * self.a2)))


class ConjugateMaterial(Material):
    """The conjugate family phi*(., y) of another material."""

    def __init__(self, base):
        self.base = base
        self.spec = f"conj[{base.spec}]"
        self.homogeneous = base.homogeneous
        self.p = base.p / (base.p - 1.0) if base.p > 1 else math.inf

    def value(self, v, y=0.0):
        return self.base.conj(v, y)[0]

    def conj(self, w, y=0.0):
        val = self.base.value(w, y)
        return val, np.zeros(np.shape(val), dtype=bool)

    def slope_interval(self, v, y=0.0):
        s = self.base.conj_slope(v, y)
        return s, s

    def conj_slope(self, w, y=0.0):
        return self.base.slope(w, y)

    def phases(self, y):
        return self.base.phases(y)

    def dual(self):
        return self.base


def parse_material(spec, p=None):
    """Build a potential family from a preset string.

    Recognised presets: ``quadratic(a)``, ``power(a,p)``, ``abs`` or ``abs(c)``,
    ``two-phase(a1,a2,theta[,p])`` (bare ``two-phase`` means ``(1,4,1/2)``) and ``stefan(a1,a2,latent)``. ``p``
    overrides the growth exponent of ``two-phase``.
    """
    if isinstance(spec, Material):
        return spec
    name, args = parse_spec(spec)
    try:
        if name == "quadratic":
            (a,) = args or [1.0]
            return PowerLaw(a, p=2.0)
        if name == "power":
            a, pp = args
            return PowerLaw(a, p=pp)
        if name == "abs":
            return AbsValue(*(args or [1.0]))
        if name in ("two-phase", "twophase", "two_phase"):
            if not args:
                args = [1.0, 4.0, 0.5]
            if len(args) == 2:
                args = args + [0.5]
            if len(args) == 3:
                a1, a2, theta = args
                pp = 2.0 if p is None else float(p)
            else:
                a1, a2, theta, pp = args
                if p is not None:
                    pp = float(p)
            return PowerLaw(a1, a2, theta, pp)
        if name == "stefan":
            return PhaseChange(*args)
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"wrong arguments for preset {spec!r}") from None
    raise ConfigError(f"unknown potential preset {spec!r}")


# --------------------------------------------------------------------------
# flux sources h(x, t, y) and initial data w0(x, y)


class Source:
    spec = "zero"

    def __call__(self, x, t, y):
        return np.zeros(np.broadcast(np.asarray(x, float), np.asarray(t, float), np.asarray(y, float)).shape)

    def averaged(self):
        return self

    @property
    def is_zero(self):
        return type(self) is Source


class ManufacturedSource(Source):
    """Flux source for which u = sin(pi x) exp(-t) solves the unit heat problem."""

    spec = "manufactured"

    def __call__(self, x, t, y=0.0):
        x, t = np.asarray(x, float), np.asarray(t, float)
        out = -(math.pi ** 2 - 1.0) / math.pi * np.cos(math.pi * x) * np.exp(-t)
        return out + np.zeros(np.shape(y))


class SineSource(Source):
    def __init__(self, c=1.0, k=1.0):
        self.c, self.kk = float(c), float(k)
        self.spec = f"sine({_fmt(c)},{_fmt(k)})"

    def __call__(self, x, t, y=0.0):
        x = np.asarray(x, float)
        return self.c * np.sin(self.kk * math.pi * x) + np.zeros(np.broadcast(np.asarray(t), np.asarray(y)).shape)


class OscillatingSource(Source):
    """h = c cos(2 pi y): a zero-mean microscopic flux forcing."""

    def __init__(self, c=1.0):
        self.c = float(c)
        self.spec = f"oscillating({_fmt(c)})"

    def __call__(self, x, t, y=0.0):
        y = np.asarray(y, float)
        return self.c * np.cos(2 * math.pi * y) + np.zeros(np.broadcast(np.asarray(x), np.asarray(t)).shape)

    def averaged(self):
        return Source()


def parse_source(spec):
    if isinstance(spec, Source):
        return spec
    name, args = parse_spec(spec)
    if name in ("zero", "none"):
        return Source()
    if name == "manufactured":
        return ManufacturedSource()
    if name == "sine":
        return SineSource(*args)
    if name == "oscillating":
        return OscillatingSource(*args)
    raise ConfigError(f"unknown source preset {spec!r}")


class InitialDatum:
    spec = "zero"

    def __call__(self, x, y):
        return np.zeros(np.broadcast(np.asarray(x, float), np.asarray(y, float)).shape)

    def averaged(self):
        return self


class SineDatum(InitialDatum):
    def __init__(self, c=1.0):
        self.c = float(c)
        self.spec = "manufactured" if c == 1.0 else f"sine({_fmt(c)})"

    def __call__(self, x, y=0.0):
        return self.c * np.sin(math.pi * np.asarray(x, float)) + np.zeros(np.shape(y))


class OscillatingDatum(InitialDatum):
    """w0 = c sin(pi x) (1 + sin(2 pi y) / 2)."""

    def __init__(self, c=1.0):
        self.c = float(c)
        self.spec = f"oscillating({_fmt(c)})"

    def __call__(self, x, y=0.0):
        x, y = np.asarray(x, float), np.asarray(y, float)
        return self.c * np.sin(math.pi * x) * (1.0 + 0.5 * np.sin(2 * math.pi * y))

    def averaged(self):
        return SineDatum(self.c)


def parse_initial(spec):
    if isinstance(spec, InitialDatum):
        return spec
    name, args = parse_spec(spec)
    if name in ("zero", "none"):
        return InitialDatum()
    if name == "manufactured":
        return SineDatum(1.0)
    if name == "sine":
        return SineDatum(*args)
    if name == "oscillating":
        return OscillatingDatum(*args)
    raise ConfigError(f"unknown initial-datum preset {spec!r}")
