"""Acceptance criteria, one test each; every test prints a PASS/FAIL line."""
import math
import time

import numpy as np
import pytest

from homoglab.cellsolve import (CellGrid, build_wz_bases, effective_tensor, f0_eval, laminate_oracle,
                                phase_representatives, tabulate_effective_law)
from homoglab.config import EXAMPLE, StudyConfig
from homoglab.evolver import ProblemData, phi_certificate, solve_parabolic
from homoglab.fitz import MonotoneGraph, RepresentativeFn, representativeness_scan
from homoglab.presets import parse_initial, parse_material, parse_source
from homoglab.study import run_convergence_study
from homoglab.twoscale import TwoScaleTest, default_family, pairing, twoscale_gap

from oracles import dense_implicit_euler, l2_p1_error


@pytest.fixture
def verdict(capsys):
    def emit(n, ok, detail):
        with capsys.disabled():
            print(f"\ncriterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        assert ok, detail
    return emit


def test_c01_harmonic_mean_cell(verdict):
    t0 = time.perf_counter()
    xi = np.linspace(-2, 2, 41)
    law = tabulate_effective_law("two-phase(1,4,1/2)", xi, xi, CellGrid(1, 1024))
    slope = law.coefficient()
    elapsed = time.perf_counter() - t0
    oracle = laminate_oracle(1, 4, 0.5).across
    verdict(1, abs(slope - oracle) <= 1e-3 and oracle == 1.6 and elapsed < 1.0,
            f"slope={slope!r} oracle={oracle!r} runtime={elapsed:.3f}s")


def test_c02_power_growth_cell(verdict):
    xi = np.linspace(-2, 2, 21)
    mat = parse_material("two-phase(1,16,1/2)", p=4)
    law = tabulate_effective_law(mat, xi, xi, CellGrid(1, 1024))
    closed = (0.5 * 1.0 + 0.5 * 16 ** (-1 / 3)) ** -3
    c = law.coefficient()
    verdict(2, abs(c - closed) <= 1e-3 * closed, f"coefficient={c!r} closed_form={closed!r}")


def test_c03_laminate_2d(verdict):
    g = CellGrid(2, 64)
    T = effective_tensor("two-phase(1,4,1/2)", g)
    ref = np.diag([1.6, 2.5])
    rel = float(np.max(np.abs(T - ref)) / np.max(np.abs(ref)))
    cross = build_wz_bases(g).max_cross_product()
    verdict(3, rel <= 1e-2 and cross <= 1e-12, f"tensor={T.tolist()} rel_err={rel!r} max_cross={cross!r}")


def test_c04_conjugacy(verdict):
    grid = np.linspace(-2, 2, 161)
    law = tabulate_effective_law("two-phase(1,4,1/2)", grid, grid, CellGrid(1, 1024))
    gap = law.conjugacy_gap()
    verdict(4, gap <= 1e-3, f"max_gap={gap!r} on eta in [-2, 2]")


def test_c05_representative_inequalities(verdict):
    rng = np.random.default_rng(2024)
    worst = -math.inf
    for _ in range(10):
        n = int(rng.integers(5, 200))
        v = np.sort(rng.uniform(-5, 5, n))
        w = np.sort(rng.uniform(-5, 5, n))
        rep = RepresentativeFn.fitzpatrick(MonotoneGraph(v, w))
        worst = max(worst, representativeness_scan(rep, v, w))
    mat = parse_material("two-phase(1,4,1/2)")
    reps = phase_representatives(mat, np.linspace(-8, 8, 801))
    tab = np.linspace(-2, 2, 21)
    g = CellGrid(1, 256)
    low = float(min(f0_eval(reps, x, e, g, pot=mat) - x * e for x in tab for e in tab))
    verdict(5, worst <= 0.0 and low >= -1e-8,
            f"max scan on graphs={worst!r} min F0-xi*eta={low!r}")


CERT_MATRIX = [
    ("quadratic(1)", "two-phase(1,4,1/2)", "zero", "sine(1)", 1 / 8),
    ("quadratic(1)", "two-phase(1,4,1/2)", "zero", "sine(1)", 1 / 16),
    ("two-phase(1,3,1/2)", "two-phase(1,16,1/2,4)", "oscillating(0.5)", "oscillating(1)", 1 / 4),
    ("stefan(1,2,1)", "quadratic(1)", "sine(1)", "sine(1)", None),
    ("abs(0.5)", "quadratic(1)", "zero", "sine(1)", 1 / 8),
    ("quadratic(1)", "abs(1)", "sine(1)", "sine(1)", None),
    ("quadratic(1)", "quadratic(1)", "manufactured", "sine(1)", None),
]


def test_c06_certificates(verdict):
    parts, ok, bumped = [], True, True
    for phi, gamma, src, w0, eps in CERT_MATRIX:
        if eps is None:
            d = ProblemData(parse_material(phi), parse_material(gamma), parse_source(src),
                            parse_initial(w0), 0.1, 16, 64)
        else:
            d = ProblemData.epsilon(phi, gamma, eps, T=0.1, m=16, source=src, w0=w0)
        tr = solve_parabolic(d)
        c = phi_certificate(tr, d)
        ok &= c.within(-1e-8, 1e-6)
        parts.append(max(abs(c.alpha), abs(c.gamma)) / c.scale)
        bad = tr.copy()
        bad.u[tr.m // 2, tr.x.size // 3] += 0.1
        bumped &= phi_certificate(bad, d).total > c.total
    verdict(6, ok and bumped, f"{len(CERT_MATRIX)} solves, max |part|/scale={max(parts)!r}, "
            f"perturbation increases total={bumped}")


def test_c07_linear_oracle(verdict):
    d = ProblemData(parse_material("quadratic(1)"), parse_material("quadratic(1)"),
                    parse_source("zero"), parse_initial("sine(1)"), 0.1, 64, 64)
    tr = solve_parabolic(d)
    _, U = dense_implicit_euler(64, 0.1, 64, lambda x: np.sin(np.pi * x))
    dev = float(np.max(np.abs(tr.u - U)) / np.max(np.abs(U)))
    verdict(7, dev <= 1e-8, f"max relative nodal deviation={dev!r}")


def test_c08_manufactured(verdict):
    T, m = 0.1, 1000
    k = T / m
    hs, errs = [], []
    for n_el in (8, 16, 32):
        d = ProblemData(parse_material("quadratic(1)"), parse_material("quadratic(1)"),
                        parse_source("manufactured"), parse_initial("sine(1)"), T, m, n_el)
        tr = solve_parabolic(d)
        hs.append(1.0 / n_el)
        errs.append(l2_p1_error(tr.x, tr.u[-1], lambda x: np.sin(np.pi * x) * math.exp(-T)))
    errs = np.array(errs)
    orders = np.log2(errs[:-1] / errs[1:])
    C = errs / (np.array(hs) ** 2 + k)
    verdict(8, bool(np.all(orders >= 1.8)) and float(C.max()) <= 1.0,
            f"errors={errs.tolist()} orders={orders.tolist()} err/(h^2+k) max={float(C.max())!r}")


@pytest.fixture(scope="module")
def study():
    cfg = StudyConfig.from_string(EXAMPLE)
    return run_convergence_study(cfg, write=False)


def test_c09_homogenization_convergence(verdict, study):
    err = study.column("error_L2")
    hom = float(study.meta["hom_norm"])
    dec = bool(np.all(np.diff(err) < 0))
    verdict(9, dec and err[-1] <= 0.05 * hom and not study.partial,
            f"eps={study.eps.tolist()} errors={err.tolist()} final/hom={float(err[-1] / hom)!r}")


def test_c10_two_scale_pairing(verdict):
    eps_list = [1 / 16, 1 / 32, 1 / 64]
    t = TwoScaleTest(0, "sin", 1)
    seq = {e: (lambda x, e=e: x * np.sin(2 * np.pi * x / e)) for e in eps_list}
    p64 = pairing(seq[1 / 64], t, 1 / 64)
    table = twoscale_gap(seq, lambda x, y: x * np.sin(2 * np.pi * y), default_family())
    single = [table.gaps(e)[t.id] for e in eps_list]
    family = [table.max_gap(e) for e in eps_list]
    single_ok = all(b <= a + 1e-12 for a, b in zip(single, single[1:]))
    family_ok = all(b < a for a, b in zip(family, family[1:]))
    verdict(10, abs(p64 - 0.25) <= 0.02 and single_ok and family_ok,
            f"pairing(1/64)={p64!r} gap(rho=sin)={single} family max gap={family}")


def test_c11_corrector_convergence(verdict, study):
    ce = study.column("corrector_error")
    ratios = ce[1:] / ce[:-1]
    verdict(11, bool(np.all(ratios <= 0.8)), f"corrector errors={ce.tolist()} ratios={ratios.tolist()}")


def test_c12_apriori_uniformity(verdict, study):
    worst = 0.0
    for name in ("u_L2H1", "z_L2", "w_LinfL2", "dtw_L2Hm1"):
        col = study.column(name)
        worst = max(worst, float(np.max(np.abs(col - col[0])) / col[0]))
    verdict(12, worst <= 10.0, f"max relative variation of monitored norms={worst!r}")
