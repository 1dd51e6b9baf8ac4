import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab.errors import ConfigError
from homoglab.twoscale import (TwoScaleField, TwoScaleTest, default_family, limit_pairing, pairing,
                               twoscale_gap, unfold, unfolding_defect)

from oracles import quad_pairing


def test_family():
    fam = default_family()
    assert len(fam) == 36 and len({t.id for t in fam}) == 36
    with pytest.raises(ConfigError):
        TwoScaleTest(0, "sin", 9)


@pytest.mark.parametrize("test", [TwoScaleTest(0, "sin", 1), TwoScaleTest(2, "cos", 3),
                                  TwoScaleTest(1), TwoScaleTest(3, "sin", 2)])
@pytest.mark.parametrize("eps", [1 / 4, 1 / 8, 0.3])
def test_pairing_matches_adaptive_quadrature(test, eps):
    f = lambda x: np.exp(x) * np.sin(2 * np.pi * x / eps + 0.3)
    ref = quad_pairing(f, test.psi, test.rho, eps)
    assert pairing(f, test, eps, n_el=int(round(64 / eps)) if eps != 0.3 else 640) == \
        pytest.approx(ref, abs=1e-10)


def test_nodal_pairing_needs_whole_periods():
    with pytest.raises(ConfigError):
        pairing(np.zeros(101), TwoScaleTest(), 1 / 8)


def test_weak_two_scale_limit():
    t = TwoScaleTest(0, "sin", 1)
    vals = [pairing(lambda x, e=e: x * np.sin(2 * np.pi * x / e), t, e) for e in (1 / 16, 1 / 32, 1 / 64)]
    assert all(abs(v - 0.25) < 1e-12 for v in vals)
    lim = limit_pairing(lambda x, y: x * np.sin(2 * np.pi * y), t)
    assert lim == pytest.approx(0.25, abs=1e-6)


def test_gap_table_rates():
    seq = {e: (lambda x, e=e: x * np.sin(2 * np.pi * x / e)) for e in (1 / 16, 1 / 32, 1 / 64)}
    table = twoscale_gap(seq, lambda x, y: x * np.sin(2 * np.pi * y))
    gaps = [table.max_gap(e) for e in table.eps_values]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[1] / gaps[0] == pytest.approx(0.5, rel=0.05)


def test_gap_csv(tmp_path):
    table = twoscale_gap({0.25: lambda x: np.ones_like(x)}, lambda x, y: 1.0 + 0 * x * y,
                         [TwoScaleTest(0), TwoScaleTest(1)])
    table.to_csv(tmp_path / "g.csv")
    text = (tmp_path / "g.csv").read_text()
    assert "x^1*1" in text
    assert table.max_gap(0.25) < 1e-12


def test_unfolding_exact_for_periodic_field():
    eps = 1 / 8
    f = lambda x: np.sin(2 * np.pi * x / eps)
    U = unfold(f, eps, M=16)
    assert U.values.shape == (8, 16)
    assert np.allclose(U.values, np.sin(2 * np.pi * U.y)[None, :])


@settings(max_examples=25, deadline=None)
@given(eps=st.floats(0.03, 0.5), a=st.floats(-3, 3), b=st.floats(0.5, 5))
def test_unfolding_defect_bound(eps, a, b):
    f = lambda x: a * np.cos(b * x) + np.sin(2 * np.pi * x / eps)
    defect, bound = unfolding_defect(f, eps, M=64)
    # sampling of the y-integral adds a small quadrature error on top of the bound
    assert defect <= bound + 2e-3 * (abs(a) + 1)


def test_field_integral_and_norm():
    F = TwoScaleField.from_function(lambda x, y: x * np.sin(2 * np.pi * y), nx=129, M=64)
    assert F.integral(TwoScaleTest(0, "sin", 1)) == pytest.approx(0.25, abs=1e-6)
    assert F.norm() == pytest.approx(math.sqrt(1 / 6), rel=1e-4)
    assert np.allclose(F.average, 0.0, atol=1e-12)
