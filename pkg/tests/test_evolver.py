import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab.cellsolve import CellGrid, tabulate_effective_law
from homoglab.errors import ConfigError
from homoglab.evolver import (ProblemData, apriori_monitor, l2_space_time_error, l2_space_time_norm,
                              phi_certificate, solve_parabolic, step_functional, weak_residual)
from homoglab.presets import parse_initial, parse_material, parse_source

from oracles import dense_implicit_euler, l2_p1_error, manufactured_source_avg


def single_scale(phi, gamma, source="zero", w0="sine(1)", T=0.1, m=16, n_el=64):
    return ProblemData(parse_material(phi), parse_material(gamma), parse_source(source),
                       parse_initial(w0), T, m, n_el)


def test_linear_case_matches_dense_oracle():
    d = single_scale("quadratic(1)", "quadratic(1)", m=32)
    tr = solve_parabolic(d)
    x, U = dense_implicit_euler(64, 0.1, 32, lambda x: np.sin(np.pi * x))
    assert np.max(np.abs(tr.u - U)) <= 1e-10 * np.max(np.abs(U))
    assert np.array_equal(tr.w[:, 1:-1], tr.u[:, 1:-1])


def test_manufactured_source_matches_dense_oracle():
    d = single_scale("quadratic(1)", "quadratic(1)", "manufactured", m=20, n_el=32)
    tr = solve_parabolic(d)
    _, U = dense_implicit_euler(32, 0.1, 20, lambda x: np.sin(np.pi * x), manufactured_source_avg)
    assert np.max(np.abs(tr.u - U)) <= 1e-10


@settings(max_examples=8, deadline=None)
@given(c=st.floats(-2, 2), a=st.floats(0.5, 3.0), m=st.integers(2, 12))
def test_linear_oracle_property(c, a, m):
    d = single_scale(f"quadratic(1)", f"quadratic({a!r})", w0=f"sine({c!r})", m=m, n_el=32)
    tr = solve_parabolic(d)
    _, U = dense_implicit_euler(32, 0.1, m, lambda x: c * np.sin(np.pi * x), a=a)
    assert np.max(np.abs(tr.u - U)) <= 1e-10 * max(1.0, abs(c))


def test_manufactured_convergence_in_h():
    errs = []
    for n_el in (8, 16, 32):
        d = single_scale("quadratic(1)", "quadratic(1)", "manufactured", m=400, n_el=n_el)
        tr = solve_parabolic(d)
        errs.append(l2_p1_error(tr.x, tr.u[-1], lambda x: np.sin(np.pi * x) * math.exp(-0.1)))
    orders = np.log2(np.array(errs[:-1]) / np.array(errs[1:]))
    assert np.all(orders >= 1.7)


CERT_MATRIX = [
    ("quadratic(1)", "two-phase(1,4,1/2)", "zero", "sine(1)", 1 / 8),
    ("two-phase(1,3,1/2)", "two-phase(1,16,1/2,4)", "oscillating(0.5)", "oscillating(1)", 1 / 4),
    ("stefan(1,2,1)", "quadratic(1)", "sine(1)", "sine(1)", None),
    ("abs(0.5)", "quadratic(1)", "zero", "sine(1)", 1 / 8),
    ("quadratic(1)", "abs(1)", "sine(1)", "sine(1)", None),
    ("stefan(1,2,1)", "abs(1)", "zero", "sine(2)", None),
    ("two-phase(1,4,1/2)", "two-phase(1,2,1/2,3)", "zero", "sine(1)", 1 / 4),
]


@pytest.mark.parametrize("phi,gamma,src,w0,eps", CERT_MATRIX)
def test_certificate_matrix(phi, gamma, src, w0, eps):
    if eps is None:
        d = single_scale(phi, gamma, src, w0)
    else:
        d = ProblemData.epsilon(phi, gamma, eps, T=0.1, m=16, source=src, w0=w0)
    tr = solve_parabolic(d)
    cert = phi_certificate(tr, d)
    assert cert.within(-1e-8, 1e-6), (cert.alpha, cert.gamma, cert.scale)
    assert weak_residual(tr, d) <= 1e-9


def test_certificate_detects_perturbation():
    d = ProblemData.epsilon("quadratic(1)", "two-phase(1,4,1/2)", 1 / 8, m=16)
    tr = solve_parabolic(d)
    base = phi_certificate(tr, d).total
    bad = tr.copy()
    bad.u[5, 40] += 0.1
    assert phi_certificate(tr, d).total == base
    assert phi_certificate(bad, d).total > base


def test_step_is_a_minimizer():
    d = ProblemData.epsilon("quadratic(1)", "two-phase(1,4,1/2)", 1 / 8, m=8)
    tr = solve_parabolic(d)
    u1 = tr.u[1]
    E = step_functional(u1, tr.w[0], d, 1)
    rng = np.random.default_rng(1)
    for _ in range(5):
        p = np.zeros_like(u1)
        p[1:-1] = 1e-3 * rng.standard_normal(u1.size - 2)
        assert step_functional(u1 + p, tr.w[0], d, 1) >= E


def test_energy_decay_without_source():
    d = ProblemData.epsilon("two-phase(1,2,1/2)", "two-phase(1,4,1/2)", 1 / 8, m=16)
    tr = solve_parabolic(d)
    l2 = np.sqrt(np.sum(tr.u[:, 1:-1] * tr.w[:, 1:-1], axis=1))
    assert np.all(np.diff(l2) <= 1e-14)


def test_apriori_norms_positive_and_finite():
    tr = solve_parabolic(ProblemData.epsilon("quadratic(1)", "two-phase(1,4,1/2)", 1 / 8, m=16))
    rec = apriori_monitor(tr).as_dict()
    assert set(rec) == {"u_L2H1", "z_L2", "w_LinfL2", "dtw_L2Hm1"}
    assert all(0 < v < 10 for v in rec.values())
    assert rec["w_LinfL2"] == pytest.approx(math.sqrt(0.5), rel=1e-3)


def test_space_time_error_on_nested_meshes():
    a = solve_parabolic(single_scale("quadratic(1)", "quadratic(1)", n_el=32))
    b = solve_parabolic(single_scale("quadratic(1)", "quadratic(1)", n_el=64))
    assert l2_space_time_error(a, a) == 0.0
    e = l2_space_time_error(a, b)
    assert 0 < e < 1e-2 * l2_space_time_norm(b)
    c = solve_parabolic(single_scale("quadratic(1)", "quadratic(1)", n_el=48))
    with pytest.raises(ConfigError):
        l2_space_time_error(b, c)


def test_homogenized_mode():
    xi = np.linspace(-4, 4, 81)
    law = tabulate_effective_law("two-phase(1,4,1/2)", xi, xi, CellGrid(1, 128))
    d = ProblemData.homogenized(law, "quadratic(1)", n_el=64, m=16)
    tr = solve_parabolic(d)
    ref = solve_parabolic(single_scale("quadratic(1)", "quadratic(1.6)", n_el=64, m=16))
    assert np.max(np.abs(tr.u - ref.u)) < 1e-9
    assert phi_certificate(tr, d).within()
    with pytest.raises(ConfigError):
        ProblemData.homogenized(law, "quadratic(1)", source="oscillating(1)")


@pytest.mark.parametrize("eps,factor", [(1 / 8, 8), (0.3, 16)])
def test_mesh_validation(eps, factor):
    with pytest.raises(ConfigError):
        ProblemData.epsilon("quadratic(1)", "two-phase(1,4,1/2)", eps, mesh_factor=factor)
