import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab.cellsolve import (CellGrid, build_wz_bases, effective_tensor, f0_eval, laminate_oracle,
                                load_law, persist_law, phase_representatives, solve_cell_dual,
                                solve_cell_primal, tabulate_effective_law)
from homoglab.errors import ConfigError, DomainError, SchemaError
from homoglab.presets import parse_material

from oracles import brute_conjugate, harmonic_mean, power_law_across

G1 = CellGrid(1, 256)


def test_grid_layout():
    g = CellGrid(1, 8)
    assert np.allclose(g.centers, (np.arange(8) + 0.5) / 8)
    assert g.weights.sum() == pytest.approx(1.0)
    assert CellGrid(2, 8).n_points == 64


def test_homogeneous_cell_has_no_corrector():
    sol = solve_cell_primal("quadratic(3)", 0.7, G1)
    assert np.all(sol.v == 0.0)
    assert sol.flux == pytest.approx(2.1)
    assert sol.value == pytest.approx(1.5 * 0.49)


@settings(max_examples=15, deadline=None)
@given(a1=st.floats(0.2, 5), a2=st.floats(0.2, 5), xi=st.floats(-3, 3))
def test_harmonic_mean_across_layers(a1, a2, xi):
    sol = solve_cell_primal(f"two-phase({a1!r},{a2!r},1/2)", xi, G1)
    c = harmonic_mean(a1, a2, 0.5)
    assert sol.flux == pytest.approx(c * xi, rel=1e-9, abs=1e-12)
    assert sol.value == pytest.approx(0.5 * c * xi * xi, rel=1e-9, abs=1e-12)
    assert abs(np.mean(sol.v)) < 1e-12


@pytest.mark.parametrize("p", [1.5, 3.0, 4.0])
def test_power_law_laminate(p):
    sol = solve_cell_primal(parse_material("two-phase(1,16,1/2)", p=p), 1.0, CellGrid(1, 512))
    assert sol.flux == pytest.approx(power_law_across(1, 16, 0.5, p), rel=1e-8)
    assert laminate_oracle(1, 16, 0.5, p).across == pytest.approx(power_law_across(1, 16, 0.5, p))


def test_corrector_potential_is_zero_mean_and_periodic():
    sol = solve_cell_primal("two-phase(1,4,1/2)", 1.0, G1)
    chi = sol.potential(G1)
    assert abs(chi.mean()) < 1e-14
    assert chi[-1] + sol.v[-1] / G1.M == pytest.approx(chi[0], abs=1e-12)


def test_kinked_cell_problem():
    # abs potential: every xi is optimal for the constant corrector, flux = c * sign(xi)
    sol = solve_cell_primal("abs(2)", 0.5, G1)
    assert sol.value == pytest.approx(1.0, abs=1e-6)
    assert sol.flux == pytest.approx(2.0, abs=1e-6)


def test_dual_cell_problem_1d():
    for eta in (-1.0, 0.3, 2.0):
        val, clip = solve_cell_dual("two-phase(1,4,1/2)", eta, G1)
        assert val == pytest.approx(eta * eta / (2 * 1.6), rel=1e-12)
        assert not clip


def test_wz_orthogonality_2d():
    g = CellGrid(2, 16)
    b = build_wz_bases(g)
    assert b.dim_W == b.dim_Z == 16 * 16 - 1
    assert b.max_cross_product() <= 1e-12


def test_laminate_tensor_2d():
    T = effective_tensor("two-phase(1,4,1/2)", CellGrid(2, 32))
    lam = laminate_oracle(1, 4, 0.5)
    assert np.allclose(T, np.diag([lam.across, lam.along]), rtol=1e-10, atol=1e-12)
    assert solve_cell_dual("two-phase(1,4,1/2)", np.array([1.0, 0.0]), CellGrid(2, 32))[0] == \
        pytest.approx(1 / 3.2)


def test_f0_bounds():
    mat = parse_material("two-phase(1,4,1/2)")
    reps = phase_representatives(mat, np.linspace(-8, 8, 1601))
    for xi, eta in [(1.0, 1.6), (1.0, 0.5), (-0.5, 1.0), (0.0, 0.0)]:
        fz = f0_eval(reps, xi, eta, G1, pot=mat)
        fe = f0_eval("fenchel", xi, eta, G1, pot=mat)
        assert xi * eta - 1e-8 <= fz <= fe + 1e-9
    # on the graph of the effective law the representative is tight
    assert f0_eval(reps, 1.0, 1.6, G1, pot=mat) == pytest.approx(1.6, abs=1e-9)


def test_laminate_oracle_errors():
    with pytest.raises(ConfigError):
        laminate_oracle(1, 4, 1.5)
    with pytest.raises(ConfigError):
        laminate_oracle(-1, 4, 0.5)


@pytest.fixture(scope="module")
def law():
    xi = np.linspace(-2, 2, 41)
    return tabulate_effective_law("two-phase(1,4,1/2)", xi, xi, G1, with_f0=True)


def test_effective_law_tables(law):
    assert law.coefficient() == pytest.approx(1.6, rel=1e-12)
    # piecewise-linear sampling of c xi^2 / 2 perturbs the conjugate by at most c dxi^2 / 8
    assert law.conjugacy_gap() <= 1.6 * 0.1 ** 2 / 8 + 1e-12
    ref = brute_conjugate(lambda v: np.interp(v, law.xi, law.phi0), law.xi, law.eta[10:31])
    assert np.allclose(law.psi0[10:31], ref, atol=2e-3)
    assert np.all(law.f0 >= np.outer(law.xi, law.eta) - 1e-8)


def test_tabulated_flux_material(law):
    mat = law.flux_material()
    v = np.linspace(-1.9, 1.9, 15)
    assert np.allclose(mat.slope(v), 1.6 * v, rtol=1e-10, atol=1e-12)
    assert np.allclose(mat.value(v), 0.8 * v * v, atol=1e-10)
    val, _ = mat.conj(1.0)
    assert val == pytest.approx(1 / 3.2, rel=1e-6)
    with pytest.raises(DomainError):
        mat.value(3.0)


def test_corrector_interpolation(law):
    c = law.corrector(np.array([0.5, 1.0]))
    assert c.shape == (2, G1.M)
    assert np.allclose(c[1], 2 * c[0])
    with pytest.raises(DomainError):
        law.corrector(2.5)


def test_law_roundtrip(law, tmp_path):
    persist_law(law, tmp_path / "law.csv")
    back = load_law(tmp_path / "law.csv")
    for name in ("xi", "phi0", "gamma0", "eta", "psi0", "f0", "correctors"):
        assert np.array_equal(getattr(law, name), getattr(back, name))
    law.meta["config_hash"] = "abc"
    persist_law(law, tmp_path / "law2.csv")
    assert load_law(tmp_path / "law2.csv", config_hash="abc").M == G1.M
    with pytest.raises(SchemaError):
        load_law(tmp_path / "law2.csv", config_hash="def")


def test_tabulate_requires_symmetric_grid():
    with pytest.raises(ConfigError):
        tabulate_effective_law("quadratic(1)", np.linspace(0, 1, 5), np.linspace(-1, 1, 5), G1)
