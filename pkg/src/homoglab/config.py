"""Study configuration: sectioned ``key = value`` files read with configparser."""
from __future__ import annotations

import configparser
import hashlib
from dataclasses import asdict, dataclass
from fractions import Fraction
from typing import Optional

from .errors import ConfigError
from .presets import parse_initial, parse_material, parse_source

EXAMPLE = """\
[problem]
phi = quadratic(1)
gamma = two-phase(1,4,1/2)
source = zero
initial = sine(1)
T = 0.1
m = 64
representative = fenchel

[study]
eps = 1/8, 1/16, 1/32
mesh_factor = 16
seed = 0

[law]
M = 1024
xi_range = 4
xi_points = 321
eta_range = 4
eta_points = 321

[tolerances]
grad = 1e-10
inclusion = 1e-8
cell = 1e-11

[output]
dir = out
"""


def _number(text):
    text = text.strip()
    try:
        return float(Fraction(text))
    except (ValueError, ZeroDivisionError):
        raise ConfigError(f"not a number: {text!r}") from None


@dataclass
class StudyConfig:
    phi: str = "quadratic(1)"
    gamma: str = "two-phase(1,4,1/2)"
    source: str = "zero"
    initial: str = "sine(1)"
    T: float = 0.1
    m: int = 64
    representative: str = "fenchel"
    graph_file: Optional[str] = None
    eps: tuple = (0.125, 0.0625, 0.03125)
    mesh_factor: int = 16
    hom_elements: Optional[int] = None
    seed: int = 0
    cell_M: int = 1024
    xi_range: float = 4.0
    xi_points: int = 321
    eta_range: float = 4.0
    eta_points: int = 321
    law_file: Optional[str] = None
    grad_tol: float = 1e-10
    incl_tol: float = 1e-8
    cell_tol: float = 1e-11
    out_dir: str = "out"

    def __post_init__(self):
        self.validate()

    def validate(self):
        eps = [float(e) for e in self.eps]
        if not eps:
            raise ConfigError("at least one eps value is required")
        if len(set(eps)) != len(eps):
            raise ConfigError("eps values must be distinct")
        for e in eps:
            if not 0.0 < e <= 1.0:
                raise ConfigError(f"eps={e!r} outside (0, 1]")
            n = self.mesh_factor / e
            if abs(n - round(n)) > 1e-9 * n:
                raise ConfigError(f"eps={e!r} with mesh factor {self.mesh_factor} gives a fractional mesh")
        if self.mesh_factor < 16:
            raise ConfigError("mesh factor must be at least 16 elements per period")
        for name in ("T", "grad_tol", "incl_tol", "cell_tol", "xi_range", "eta_range"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.m < 1 or self.cell_M < 2 or self.xi_points < 3 or self.eta_points < 3:
            raise ConfigError("m, M and table sizes are too small")
        if self.representative not in ("fenchel", "fitzpatrick"):
            raise ConfigError(f"unknown representative {self.representative!r}")
        if self.gamma != "general":
            parse_material(self.gamma)
        elif not self.graph_file:
            raise ConfigError("a general flux law needs graph_file")
        parse_material(self.phi)
        parse_source(self.source)
        parse_initial(self.initial)
        self.eps = tuple(sorted(eps, reverse=True))

    # -- identity ------------------------------------------------------------
    def canonical(self):
        """Text of every field that affects results (the output dir excluded)."""
        d = asdict(self)
        d.pop("out_dir")
        return ";".join(f"{k}={d[k]!r}" for k in sorted(d))

    @property
    def hash(self):
        return hashlib.sha256(self.canonical().encode()).hexdigest()[:16]

    @property
    def hom_n_el(self):
        if self.hom_elements:
            return int(self.hom_elements)
        return int(round(self.mesh_factor / min(self.eps)))

    # -- parsing ---------------------------------------------------------------
    @classmethod
    def from_string(cls, text):
        cp = configparser.ConfigParser(inline_comment_prefixes=("#", ";"))
        cp.optionxform = str
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        return cls._from_parser(cp)

    @classmethod
    def from_file(cls, path):
        with open(path) as fh:
            return cls.from_string(fh.read())

    @classmethod
    def _from_parser(cls, cp):
        kw = {}
        known = {
            "problem": {"phi": str, "gamma": str, "source": str, "initial": str, "T": _number,
                        "m": int, "representative": str, "graph_file": str},
            "study": {"eps": lambda s: tuple(_number(t) for t in s.split(",") if t.strip()),
                      "mesh_factor": int, "hom_elements": int, "seed": int},
            "law": {"M": int, "xi_range": _number, "xi_points": int, "eta_range": _number,
                    "eta_points": int, "file": str},
            "tolerances": {"grad": _number, "inclusion": _number, "cell": _number},
            "output": {"dir": str},
        }
        rename = {("law", "M"): "cell_M", ("law", "file"): "law_file",
                  ("tolerances", "grad"): "grad_tol", ("tolerances", "inclusion"): "incl_tol",
                  ("tolerances", "cell"): "cell_tol", ("output", "dir"): "out_dir"}
        for sec in cp.sections():
            if sec not in known:
                raise ConfigError(f"unknown config section [{sec}]")
            for key, raw in cp.items(sec):
                if key not in known[sec]:
                    raise ConfigError(f"unknown key {key!r} in [{sec}]")
                try:
                    val = known[sec][key](raw)
                except ValueError as exc:
                    raise ConfigError(f"[{sec}] {key}: {exc}") from None
                kw[rename.get((sec, key), key)] = val
        return cls(**kw)

    def to_string(self):
        def fmt(x):
            return repr(float(x)) if isinstance(x, float) else str(x)
        lines = ["[problem]"]
        for k in ("phi", "gamma", "source", "initial", "T", "m", "representative"):
            lines.append(f"{k} = {fmt(getattr(self, k))}")
        if self.graph_file:
            lines.append(f"graph_file = {self.graph_file}")
        lines += ["", "[study]", "eps = " + ", ".join(repr(e) for e in self.eps),
                  f"mesh_factor = {self.mesh_factor}", f"seed = {self.seed}"]
        if self.hom_elements:
            lines.append(f"hom_elements = {self.hom_elements}")
        lines += ["", "[law]", f"M = {self.cell_M}", f"xi_range = {self.xi_range!r}",
                  f"xi_points = {self.xi_points}", f"eta_range = {self.eta_range!r}",
                  f"eta_points = {self.eta_points}"]
        if self.law_file:
            lines.append(f"file = {self.law_file}")
        lines += ["", "[tolerances]", f"grad = {self.grad_tol!r}", f"inclusion = {self.incl_tol!r}",
                  f"cell = {self.cell_tol!r}", "", "[output]", f"dir = {self.out_dir}", ""]
        return "\n".join(lines)
