import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heteroflow import model
from heteroflow.model import (
    AffinePerturbation,
    Point,
    ProblemTriple,
    SaturatedPerturbation,
    WPoint,
    ZeroPerturbation,
    build_triple,
)
from heteroflow.norms import Grid, GridPath


def triple_b05():
    return ProblemTriple(A=[[2.0]], b=[0.5])


def affine_h(n):
    rng = np.random.default_rng(5)
    def sym():
        m = rng.normal(size=(n, n)) * 0.1
        return 0.5 * (m + m.T)
    return AffinePerturbation(sym(), tuple(sym() for _ in range(n - 1)), sym())


# ---------------------------------------------------------------------------
# construction
# ---------------------------------------------------------------------------

def test_build_triple_identity_case():
    tr = build_triple(np.eye(3), np.zeros(3), 1.0, np.eye(3))
    assert np.allclose(tr.A, np.eye(3))
    assert np.allclose(tr.b, 0.0)


def test_build_triple_scalar_square_root():
    # dense matrix-square-root oracle: P = [4] has P^(1/2) = [2]
    tr = build_triple([[4.0]], [0.5], 1.0, [[1.0]])
    assert np.allclose(tr.A, [[4.0]])
    assert np.allclose(tr.b, [0.25])


def test_build_triple_inertia_matches_sign_matrix():
    rng = np.random.default_rng(0)
    M = rng.normal(size=(3, 3))
    P = M @ M.T + 3 * np.eye(3)
    D = np.diag([1.0, -1.0, 1.0])
    tr = build_triple(P, 0.1 * rng.normal(size=3), 2.0, D)
    signs = np.sign(np.linalg.eigvalsh(tr.A))
    assert sorted(signs) == sorted(np.diag(D))


def test_build_triple_rejects_inadmissible_metric():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(2, 2))
    P = M @ M.T + 0.05 * np.eye(2)
    q = np.array([5.0, 5.0])   # c |P^(-1/2) q|^2 >= 1
    with pytest.raises(ValueError):
        build_triple(P, q, 1.0, np.eye(2))


def test_build_triple_rejects_non_spd():
    with pytest.raises(ValueError):
        build_triple([[1.0, 0.0], [0.0, -1.0]], [0.0, 0.0], 1.0, np.eye(2))


def test_triple_invariants_enforced():
    with pytest.raises(ValueError):
        ProblemTriple(A=[[1.0, 2.0], [0.0, 1.0]], b=[0.0, 0.0])   # not symmetric
    with pytest.raises(ValueError):
        ProblemTriple(A=[[0.0]], b=[0.0])                          # singular
    with pytest.raises(ValueError):
        ProblemTriple(A=[[1.0]], b=[1.0])                          # |b| >= 1


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def test_rhs_trivial_midpoint():
    # b = 0, h = 0 at (0, 0): the slow equation gives zdot = 1
    tr = ProblemTriple(A=[[2.0]], b=[0.0])
    vx, vz = model.rhs(tr, 0.3, Point([0.0], 0.0))
    assert np.allclose(vx, 0.0)
    assert vz == pytest.approx(1.0)


def test_rhs_vanishes_at_rest_points():
    tr = triple_b05()
    for z in (1.0, -1.0):
        vx, vz = model.rhs(tr, 0.1, Point([0.0], z))
        assert np.allclose(vx, 0.0, atol=1e-14)
        assert vz == pytest.approx(0.0, abs=1e-14)


def test_rhs_direct_evaluation():
    tr = triple_b05()
    vx, vz = model.rhs(tr, 0.1, Point([0.25], 0.0))
    assert vx[0] == pytest.approx((-0.5 + 0.5) / 0.1)
    assert vz == pytest.approx(-0.25 + 1.0)   # <A x, b> = 0.25


def test_remainder_zero_map():
    tr = triple_b05()
    rx, rz = model.remainder(tr, 0.2, Point([0.7], -0.3))
    assert np.allclose(rx, 0.0) and rz == 0.0


def test_remainder_constant_h_hand_value():
    # h = const eta*I at p = (0,0): -(eta I)(0, -1) = (0, eta)
    eta = 0.37

    class ConstH:
        is_zero = False
        def __call__(self, eps, x, z):
            return eta * np.eye(2)
        def batch(self, eps, X, Z):
            return np.tile(eta * np.eye(2), (len(Z), 1, 1))
        def batch_deriv(self, eps, X, Z):
            return np.zeros((len(Z), 2, 2, 2))
        def config(self):
            return {"kind": "zero"}

    with pytest.raises(ValueError):
        ProblemTriple(A=[[2.0]], b=[0.5], h=ConstH())   # h(0,0,0) != 0 rejected
    tr = ProblemTriple(A=[[2.0]], b=[0.5])
    object.__setattr__(tr, "h", ConstH())
    rx, rz = model.remainder(tr, 0.1, Point([0.0], 0.0))
    assert np.allclose(rx, 0.0)
    assert rz == pytest.approx(eta)


def test_remainder_vanishes_at_rest_point_for_scaled_h():
    S = np.array([[0.2, 0.1], [0.1, 0.3]])
    h = AffinePerturbation(S, (np.zeros((2, 2)),), np.zeros((2, 2)))
    tr = ProblemTriple(A=[[2.0]], b=[0.5], h=h)
    rx, rz = model.remainder(tr, 0.1, Point([0.0], 1.0))
    assert np.allclose(rx, 0.0) and rz == pytest.approx(0.0)


def test_potential_values_at_rest_points():
    tr = triple_b05()
    assert model.potential(tr, 0.3, Point([0.0], 1.0)) == pytest.approx(-2.0 / 3.0)
    assert model.potential(tr, 0.3, Point([0.0], -1.0)) == pytest.approx(2.0 / 3.0)


def test_metric_inverse_block_formula_b0():
    tr = ProblemTriple(A=[[2.0]], b=[0.0])
    gi = model.metric_inverse(tr, 0.2, Point([0.3], 0.4))
    assert np.allclose(gi, np.diag([1.0 / 0.04, 1.0]))


def test_metric_inverse_rejects_oversized_h():
    big = AffinePerturbation(np.zeros((2, 2)), (np.zeros((2, 2)),),
                             -50.0 * np.eye(2))
    tr = ProblemTriple(A=[[2.0]], b=[0.5], h=big)
    with pytest.raises(ValueError):
        model.metric_inverse(tr, 0.5, Point([0.0], 5.0))


def test_gradient_pair_consistency_random():
    # rhs must equal the negative metric gradient of the potential, with the
    # gradient taken by finite differences: 200 random samples
    rng = np.random.default_rng(42)
    hs = [None, affine_h(2),
          SaturatedPerturbation(np.array([[0.2, 0.05], [0.05, 0.1]]),
                                np.array([[0.3]]), 0.2)]
    count = 0
    while count < 200:
        tr = ProblemTriple(A=[[rng.uniform(0.5, 3.0) * rng.choice([-1, 1])]],
                           b=[rng.uniform(-0.8, 0.8)],
                           h=hs[count % len(hs)])
        eps = rng.uniform(0.05, 0.5)
        p = Point(rng.normal(size=1), rng.normal())
        try:
            gi = model.metric_inverse(tr, eps, p)
        except ValueError:
            continue
        count += 1
        step = 1e-6
        grad = np.zeros(2)
        for k in range(2):
            dp = np.zeros(2)
            dp[k] = step
            fp = model.potential(tr, eps, Point(p.x + dp[:-1], p.z + dp[-1]))
            fm = model.potential(tr, eps, Point(p.x - dp[:-1], p.z - dp[-1]))
            grad[k] = (fp - fm) / (2 * step)
        expect = -gi @ grad
        vx, vz = model.rhs(tr, eps, p)
        got = np.append(vx, vz)
        assert np.allclose(got, expect, rtol=1e-6, atol=1e-5)


# ---------------------------------------------------------------------------
# limit solution
# ---------------------------------------------------------------------------

def test_limit_solution_at_zero():
    tr = triple_b05()
    v = model.limit_solution(tr, 0.0)
    assert np.allclose(v[:-1], tr.A_inv() @ tr.b)
    assert v[-1] == 0.0


def test_limit_solution_b0_is_tanh():
    tr = ProblemTriple(A=[[2.0]], b=[0.0])
    t = np.linspace(-3, 3, 11)
    v = model.limit_solution(tr, t)
    assert np.allclose(v[:, 0], 0.0)
    assert np.allclose(v[:, 1], np.tanh(t))


def test_limit_solution_asymptotics():
    tr = triple_b05()
    r = tr.rate
    for t, sign in ((30.0, 1.0), (-30.0, -1.0)):
        v = model.limit_solution(tr, t)
        tol = np.exp(-2.0 * r * abs(t))
        assert abs(v[-1] - sign) < tol
        assert np.linalg.norm(v[:-1]) < 4 * tol


def test_limit_solution_constraint_identity():
    # A x = b (1 - z^2) pointwise to 1e-12
    tr = ProblemTriple(A=[[1.7]], b=[0.6])
    t = np.linspace(-10, 10, 201)
    v = model.limit_solution(tr, t)
    resid = v[:, :-1] @ tr.A.T - np.outer(1.0 - v[:, -1] ** 2, tr.b)
    assert np.abs(resid).max() < 1e-12


def test_limit_solution_reduced_ode():
    # dz/dt = (1 - |b|^2)(1 - z^2) via finite differences, to 1e-8
    tr = triple_b05()
    t = np.linspace(-5, 5, 101)
    s = 1e-4
    dz = (model.limit_solution(tr, t + s)[:, -1]
          - model.limit_solution(tr, t - s)[:, -1]) / (2 * s)
    z = model.limit_solution(tr, t)[:, -1]
    assert np.abs(dz - tr.rate * (1.0 - z**2)).max() < 1e-8


def test_limit_solution_z_strictly_increasing():
    tr = triple_b05()
    z = model.limit_solution(tr, np.linspace(-20, 20, 401))[:, -1]
    assert np.all(np.diff(z) > 0)


def test_limit_solution_derivatives_match_fd():
    tr = ProblemTriple(A=[[2.0, 0.3], [0.3, -1.5]], b=[0.2, 0.4])
    t = np.linspace(-4, 4, 17)
    s = 1e-5
    fd1 = (model.limit_solution(tr, t + s) - model.limit_solution(tr, t - s)) / (2 * s)
    assert np.allclose(fd1, model.limit_solution_dt(tr, t), atol=1e-8)
    fd2 = (model.limit_solution_dt(tr, t + s)
           - model.limit_solution_dt(tr, t - s)) / (2 * s)
    assert np.allclose(fd2, model.limit_solution_dtt(tr, t), atol=1e-7)


# ---------------------------------------------------------------------------
# coordinate changes
# ---------------------------------------------------------------------------

def test_to_w_on_limit_solution():
    tr = triple_b05()
    wp = model.to_w(tr, Point(tr.A_inv() @ tr.b, 0.0))
    assert np.allclose(wp.w, 0.0, atol=1e-15)
    assert wp.z == 0.0


def test_to_w_b0():
    tr = ProblemTriple(A=[[2.0]], b=[0.0])
    wp = model.to_w(tr, Point([0.7], 0.3))
    assert wp.w[0] == pytest.approx(1.4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=3, max_size=3))
def test_w_round_trip(vals):
    tr = ProblemTriple(A=[[2.0, 0.3], [0.3, -1.5]], b=[0.2, 0.4])
    p = Point(np.array(vals[:2]), vals[2])
    q = model.from_w(tr, model.to_w(tr, p))
    assert np.allclose(q.x, p.x, atol=1e-12)
    assert q.z == pytest.approx(p.z, abs=1e-12)


def test_w_round_trip_hundred_random_points():
    rng = np.random.default_rng(3)
    tr = ProblemTriple(A=[[2.0, 0.3], [0.3, -1.5]], b=[0.2, 0.4])
    for _ in range(100):
        p = Point(rng.normal(size=2), rng.normal())
        q = model.from_w(tr, model.to_w(tr, p))
        assert np.abs(np.append(q.x - p.x, q.z - p.z)).max() < 1e-12


def test_A_eps_values():
    tr = triple_b05()
    assert np.allclose(model.A_eps(tr, 0.0, 3.0), tr.A)
    tr0 = ProblemTriple(A=[[2.0]], b=[0.0])
    assert np.allclose(model.A_eps(tr0, 0.3, 5.0), tr0.A)
    got = model.A_eps(tr, 0.1, 1.0)
    assert got[0, 0] == pytest.approx(2.0 + 2 * 0.1 * 0.25)


def test_zoom_fixed_point_and_round_trip():
    eps = 0.2
    g = Grid(2.0, 11)
    const = GridPath(g, np.column_stack([np.zeros(11), np.full(11, eps)]))
    zoomed = model.zoom(const, eps)
    assert np.allclose(zoomed.zeta, 1.0)
    assert zoomed.grid.T == pytest.approx(g.T / eps)
    back = model.unzoom(zoomed, eps)
    assert np.allclose(back.values, const.values, atol=1e-14)
    assert back.grid.T == pytest.approx(g.T)


@settings(max_examples=50, deadline=None)
@given(st.floats(0.05, 0.9), st.integers(0, 10**6))
def test_zoom_round_trip_random(eps, seed):
    rng = np.random.default_rng(seed)
    g = Grid(1.5, 9)
    p = GridPath(g, rng.normal(size=(9, 3)))
    q = model.unzoom(model.zoom(p, eps), eps)
    assert np.abs(q.values - p.values).max() < 1e-12 * max(1.0, np.abs(p.values).max())


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def test_triple_json_round_trip_zero():
    tr = triple_b05()
    tr2 = model.triple_from_json(model.triple_to_json(tr))
    assert np.allclose(tr2.A, tr.A) and np.allclose(tr2.b, tr.b)
    assert tr2.h.is_zero


def test_triple_json_round_trip_families():
    h = affine_h(2)
    tr = ProblemTriple(A=[[2.0]], b=[0.5], h=h, c_scale=2.5)
    tr2 = model.triple_from_json(model.triple_to_json(tr))
    assert tr2.c_scale == 2.5
    X = np.array([[0.4]])
    Z = np.linspace(-1, 1, 5)
    assert np.allclose(tr2.h.batch(0.1, np.tile(X, (5, 1)), Z),
                       tr.h.batch(0.1, np.tile(X, (5, 1)), Z))

    hs = SaturatedPerturbation(np.array([[0.2, 0.0], [0.0, 0.1]]),
                               np.array([[0.5]]), 0.3)
    tr3 = ProblemTriple(A=[[2.0]], b=[0.5], h=hs)
    tr4 = model.triple_from_json(model.triple_to_json(tr3))
    assert np.allclose(tr4.h(0.2, np.array([0.3]), 0.1),
                       tr3.h(0.2, np.array([0.3]), 0.1))


def test_triple_json_schema_fields():
    doc = json.loads(model.triple_to_json(triple_b05()))
    assert set(doc) == {"A", "b", "c_scale", "h"}
    assert doc["h"]["kind"] == "zero"
