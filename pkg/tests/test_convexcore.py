import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab.convexcore import (ConjugatePair, Potential, conjugate, export_potential,
                                 import_potential, moreau_smooth, subdifferential_interval)
from homoglab.errors import ConvexityError, DomainError

from oracles import brute_conjugate


@st.composite
def convex_samples(draw, n_min=3, n_max=40):
    n = draw(st.integers(n_min, n_max))
    steps = draw(st.lists(st.floats(0.01, 1.0), min_size=n - 1, max_size=n - 1))
    slopes = np.sort(draw(st.lists(st.floats(-5, 5), min_size=n - 1, max_size=n - 1)))
    v0 = draw(st.floats(-3, 0))
    grid = v0 + np.concatenate([[0.0], np.cumsum(steps)])
    vals = np.concatenate([[0.0], np.cumsum(slopes * np.diff(grid))])
    return Potential(grid, vals)


@settings(max_examples=60, deadline=None)
@given(pot=convex_samples(), w=st.lists(st.floats(-8, 8), min_size=1, max_size=20))
def test_conjugate_is_brute_force_max(pot, w):
    w = np.sort(np.unique(np.asarray(w)))
    c = conjugate(pot, w)
    ref = brute_conjugate(lambda v: np.interp(v, pot.grid, pot.values), pot.grid, w)
    assert np.allclose(c.values, ref, rtol=0, atol=1e-12 * (1 + np.abs(ref).max()))
    inside = (w >= pot.slopes[0]) & (w <= pot.slopes[-1])
    assert np.all(c.clipped[inside] == False)  # noqa: E712
    assert np.all(c.clipped[~inside])


@settings(max_examples=60, deadline=None)
@given(pot=convex_samples(), data=st.data())
def test_fenchel_young(pot, data):
    pair = ConjugatePair.from_potential(pot)
    v = data.draw(st.floats(pot.lo, pot.hi))
    w = data.draw(st.floats(-6, 6))
    assert pair.young_gap(v, w) >= -1e-12


@settings(max_examples=40, deadline=None)
@given(pot=convex_samples())
def test_biconjugate_restores_convex_samples(pot):
    s = pot.slopes
    # dual nodes closer than rounding would make the second transform ill-conditioned
    dual = conjugate(pot, np.unique(np.round(np.concatenate([s, [s[0] - 1, s[-1] + 1]]), 9)))
    bi = conjugate(dual, pot.grid)
    assert np.allclose(bi.values, pot.values, atol=1e-10 * (1 + np.abs(pot.values).max()))


def test_conjugate_of_quadratic_samples():
    v = np.linspace(-4, 4, 801)
    pot = Potential.from_preset("quadratic(2)")
    c = conjugate(Potential(v, v ** 2), np.linspace(-3, 3, 61))
    assert np.max(np.abs(c.values - c.grid ** 2 / 4)) < 1e-4
    assert pot(1.5) == pytest.approx(2.25)


def test_convexity_error_reports_nodes():
    with pytest.raises(ConvexityError) as exc:
        conjugate(Potential([0, 1, 2, 3], [0, 2, 3, 6]), [0.0])
    assert exc.value.index == (0, 1, 2)


def test_grid_potential_domain():
    p = Potential([0.0, 1.0, 2.0], [0.0, 0.0, 1.0])
    with pytest.raises(DomainError):
        p(3.0)
    with pytest.raises(DomainError):
        Potential([0.0, 0.0], [1.0, 2.0])


def test_subdifferential_interval():
    p = Potential([-1.0, 0.0, 1.0, 2.0], [1.0, 0.0, 1.0, 3.0])
    assert subdifferential_interval(p, 0.0) == (-1.0, 1.0)
    assert subdifferential_interval(p, 0.5) == (1.0, 1.0)
    assert subdifferential_interval(p, -1.0) == (-1.0, -1.0)
    lo, hi = subdifferential_interval(Potential.from_preset("abs(2)"), np.array([-1.0, 0.0, 1.0]))
    assert list(lo) == [-2.0, -2.0, 2.0] and list(hi) == [-2.0, 2.0, 2.0]


@settings(max_examples=40, deadline=None)
@given(pot=convex_samples(), lam=st.floats(0.01, 2.0))
def test_moreau_envelope(pot, lam):
    env = moreau_smooth(pot, lam)
    x = np.linspace(pot.lo, pot.hi, 97)
    fx = np.interp(x, pot.grid, pot.values)
    ex = env(x)
    assert np.all(ex <= fx + 1e-12)
    # brute force infimal convolution over a fine sampling of the hull
    s = np.linspace(pot.lo, pot.hi, 4001)
    fs = np.interp(s, pot.grid, pot.values)
    ref = np.min(fs[None, :] + (x[:, None] - s[None, :]) ** 2 / (2 * lam), axis=1)
    assert np.all(ex <= ref + 1e-12)
    assert np.all(ref - ex <= (pot.hi - pot.lo) / 4000 * (np.abs(pot.slopes).max() + 1))
    d = env.slope_evaluator(x)
    assert np.all(np.diff(d) >= -1e-12)
    assert np.all(np.abs(np.diff(d)) <= np.diff(x) / lam + 1e-9)


def test_moreau_of_abs_is_huber():
    env = moreau_smooth(Potential.from_preset("abs"), 0.5)
    x = np.array([-2.0, -0.25, 0.0, 0.3, 1.0])
    huber = np.where(np.abs(x) <= 0.5, x ** 2, np.abs(x) - 0.25)
    assert np.allclose(env(x), huber)


def test_coercivity_constants():
    pair = ConjugatePair.from_potential(Potential.from_preset("two-phase(1,4,1/2)", y=0.25))
    assert pair.coercivity_violation() <= 1e-12


def test_export_import_roundtrip(tmp_path):
    p = Potential(np.linspace(-1, 1, 11), np.linspace(-1, 1, 11) ** 2 + 0.1)
    export_potential(p, tmp_path / "p.csv")
    q = import_potential(tmp_path / "p.csv")
    assert np.array_equal(p.grid, q.grid) and np.array_equal(p.values, q.values)
