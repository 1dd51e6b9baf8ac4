import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from homoglab.convexcore import Potential
from homoglab.errors import ConsistencyError, MonotonicityError
from homoglab.fitz import (MonotoneGraph, RepresentativeFn, export_graph, fitzpatrick_eval,
                           import_graph, nullmin_residual, representativeness_scan)
from homoglab.presets import parse_material

from oracles import fitzpatrick_identity, fitzpatrick_symmetric


@st.composite
def monotone_graphs(draw):
    n = draw(st.integers(2, 60))
    v = np.sort(np.array(draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n))))
    w = np.sort(np.array(draw(st.lists(st.floats(-5, 5), min_size=n, max_size=n))))
    return MonotoneGraph(v, w)


def test_identity_fitzpatrick_closed_form():
    v = np.linspace(-6, 6, 2401)
    rep = RepresentativeFn.fitzpatrick(MonotoneGraph(v, v))
    a = np.linspace(-1.5, 1.5, 13)
    A, B = np.meshgrid(a, a)
    val = rep(A, B)
    exact = fitzpatrick_identity(A, B)
    # the sampled maximum sits below the exact supremum by at most (dv)^2 / 4
    assert np.all(val <= exact + 1e-12)
    assert np.max(exact - val) <= (v[1] - v[0]) ** 2 / 4 + 1e-12


def test_monotonicity_violation_pair():
    with pytest.raises(MonotonicityError) as exc:
        MonotoneGraph([0.0, 1.0, 2.0], [0.0, 2.0, 1.0])
    assert set(exc.value.pair) == {1, 2}
    with pytest.raises(MonotonicityError):
        MonotoneGraph.from_linear_map([[0.0, 1.0], [-1.0, -0.5]], [1.0])


def test_set_valued_graph_accepted():
    g = MonotoneGraph.from_potential(Potential.from_preset("abs"), np.linspace(-1, 1, 5))
    assert len(g) == 6
    assert g.k == pytest.approx(1.0)


@settings(max_examples=10, deadline=None)
@given(g=monotone_graphs())
def test_representative_exact_on_graph(g):
    rep = RepresentativeFn.fitzpatrick(g)
    assert representativeness_scan(rep, g.v, g.w) <= 0.0
    # other samples can only tie the own term, up to rounding of their products
    scale = 1.0 + np.max(np.abs(g.v)) * np.max(np.abs(g.w))
    assert np.all(nullmin_residual(rep, g.v, g.w) <= 8 * np.finfo(float).eps * scale)


@settings(max_examples=40, deadline=None)
@given(v=st.lists(st.floats(-4, 4), min_size=2, max_size=40, unique=True),
       a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_sampled_fitzpatrick_grows_with_the_sample(v, a, b):
    v = np.sort(np.array(v))
    full = fitzpatrick_eval(MonotoneGraph(v, v), a, b)
    half = fitzpatrick_eval(MonotoneGraph(v[::2], v[::2]), a, b)
    assert half <= full <= fitzpatrick_identity(a, b) + 1e-12


def test_fitzpatrick_convex_in_both_arguments():
    g = MonotoneGraph.from_material(parse_material("stefan(1,2,1)"), np.linspace(-2, 2, 81))
    rng = np.random.default_rng(0)
    P = rng.uniform(-2, 2, (200, 2))
    Q = rng.uniform(-2, 2, (200, 2))
    t = rng.uniform(0, 1, 200)
    mid = t[:, None] * P + (1 - t[:, None]) * Q
    f = lambda X: fitzpatrick_eval(g, X[:, 0], X[:, 1])
    assert np.all(f(mid) <= t * f(P) + (1 - t) * f(Q) + 1e-12)


def test_fenchel_representative():
    rep = RepresentativeFn.fenchel(Potential.from_preset("quadratic(2)"))
    v = np.linspace(-2, 2, 9)
    assert np.allclose(rep(v, 2 * v), 2 * v * v)
    val, clip = rep.evaluate(1.0, 0.5)
    assert val == pytest.approx(1.0 + 0.0625) and not clip
    assert representativeness_scan(rep, v, np.linspace(-3, 3, 9)) <= 1e-12


def test_nullmin_detects_undersampling():
    g = MonotoneGraph([-1.0, 1.0], [-1.0, 1.0])
    rep = RepresentativeFn.fitzpatrick(g)
    with pytest.raises(ConsistencyError):
        nullmin_residual(rep, 0.0, 0.5)  # two samples give -0.5 against a pairing of 0
    assert nullmin_residual(rep, 1.0, 1.0) == 0.0


def test_two_dimensional_graph():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    g = MonotoneGraph.from_linear_map(A, [0.5, 1.0, 1.5], n_directions=12)
    rep = RepresentativeFn.fitzpatrick(g)
    assert representativeness_scan(rep, g.v, g.w) <= 0.0
    assert np.all(nullmin_residual(rep, g.v, g.w) == 0.0)
    x = np.array([[0.3, -0.2], [0.1, 0.4]])
    xs = x @ A.T + np.array([[0.1, 0.0], [0.0, -0.2]])
    fine = RepresentativeFn.fitzpatrick(
        MonotoneGraph.from_linear_map(A, np.linspace(0.05, 1.5, 30), n_directions=64))
    exact = fitzpatrick_symmetric(A, x, xs)
    assert np.all(rep(x, xs) <= fine(x, xs) + 1e-12)
    assert np.all(fine(x, xs) <= exact + 1e-12)
    assert np.max(exact - fine(x, xs)) < 5e-3


def test_graph_roundtrip(tmp_path):
    g = MonotoneGraph.from_material(parse_material("abs(2)"), np.linspace(-1, 1, 7))
    export_graph(g, tmp_path / "g.csv")
    h = import_graph(tmp_path / "g.csv")
    assert np.array_equal(g.v, h.v) and np.array_equal(g.w, h.w)
    g2 = MonotoneGraph.from_linear_map(np.eye(2), [1.0], n_directions=4)
    export_graph(g2, tmp_path / "g2.csv")
    assert np.array_equal(import_graph(tmp_path / "g2.csv").w, g2.w)
