import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heteroflow import model, norms
from heteroflow.norms import (
    Grid,
    GridPath,
    WeightContext,
    g0_inner,
    g0_matrix,
    g0_inverse_matrix,
    l2_norm,
    linf_norm,
    pointwise_norm,
    sobolev_ratio,
    w12_norm,
)


def ctx_b05(eps=0.1):
    return WeightContext(eps, np.array([0.5]))


def test_grid_invariants():
    with pytest.raises(ValueError):
        Grid(1.0, 4)      # even
    with pytest.raises(ValueError):
        Grid(-1.0, 5)
    g = Grid(2.0, 5)
    assert g.dt == pytest.approx(1.0)
    assert 0.0 in g.times()


def test_pointwise_norm_b0():
    ctx = WeightContext(0.2, np.array([0.0]))
    assert pointwise_norm(ctx, [3.0, 4.0]) == pytest.approx(
        np.hypot(0.2 * 3.0, 4.0))


def test_unit_vector_b_over_eps():
    # the distinguished direction (b/eps, 1) has weighted norm one
    for bn in (0.3, 0.5, 0.8):
        ctx = WeightContext(0.07, np.array([bn]))
        eta = np.array([bn / 0.07, 1.0])
        assert pointwise_norm(ctx, eta) == pytest.approx(1.0)


def test_norm_sandwich_bulk_random():
    # (1/2)(eps^2|xi|^2 + z^2) <= |eta|_eps^2 <= 2/(1-|b|^2) (eps^2|xi|^2 + z^2)
    rng = np.random.default_rng(0)
    for _ in range(20):
        nm1 = rng.integers(1, 4)
        b = rng.normal(size=nm1)
        norm_b = np.linalg.norm(b)
        if norm_b >= 0.95:
            b *= 0.9 / norm_b
        ctx = WeightContext(rng.uniform(0.01, 0.9), b)
        etas = rng.normal(size=(500, nm1 + 1))
        sq = norms.pointwise_norm_sq_many(ctx, etas)
        base = ctx.eps**2 * np.sum(etas[:, :-1] ** 2, axis=1) + etas[:, -1] ** 2
        assert np.all(sq >= 0.5 * base - 1e-12)
        assert np.all(sq <= 2.0 / (1.0 - ctx.bnorm2) * base + 1e-12)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.01, 0.99), st.floats(-0.9, 0.9),
       st.lists(st.floats(-5, 5), min_size=2, max_size=2))
def test_norm_sandwich_hypothesis(eps, bval, eta):
    ctx = WeightContext(eps, np.array([bval]))
    eta = np.array(eta)
    sq = pointwise_norm(ctx, eta) ** 2
    base = eps**2 * eta[0] ** 2 + eta[1] ** 2
    assert sq >= 0.5 * base - 1e-12
    assert sq <= 2.0 / (1.0 - bval**2) * base + 1e-12


def test_meps_equivalence_restated():
    # (1/2)|M eta|^2 <= |eta|_eps^2 <= 2/(1-|b|^2) |M eta|^2
    rng = np.random.default_rng(7)
    ctx = WeightContext(0.13, np.array([0.4, 0.3]))
    etas = rng.normal(size=(1000, 3))
    sq = norms.pointwise_norm_sq_many(ctx, etas)
    msq = np.sum((etas * ctx.meps) ** 2, axis=1)
    assert np.all(sq >= 0.5 * msq - 1e-12)
    assert np.all(sq <= 2.0 / (1.0 - ctx.bnorm2) * msq + 1e-12)


def test_g0_inner_polarization():
    ctx = ctx_b05()
    rng = np.random.default_rng(1)
    for _ in range(20):
        eta = rng.normal(size=2)
        assert g0_inner(ctx, eta, eta) == pytest.approx(
            pointwise_norm(ctx, eta) ** 2, rel=1e-12)


def test_g0_inner_block_diagonality_b0():
    ctx = WeightContext(0.3, np.array([0.0]))
    assert g0_inner(ctx, [1.0, 0.0], [0.0, 1.0]) == pytest.approx(0.0)


def test_g0_inner_matches_dense_matrix():
    # dense-matrix oracle: the explicit metric applied as a quadratic form
    rng = np.random.default_rng(2)
    ctx = WeightContext(0.23, np.array([0.5, -0.3]))
    G = g0_matrix(ctx)
    for _ in range(50):
        u, v = rng.normal(size=3), rng.normal(size=3)
        assert g0_inner(ctx, u, v) == pytest.approx(u @ G @ v, abs=1e-12)


def test_g0_matrix_inverts_block_formula():
    ctx = WeightContext(0.17, np.array([0.4, 0.2]))
    assert np.allclose(g0_matrix(ctx) @ g0_inverse_matrix(ctx), np.eye(3),
                       atol=1e-12)


def test_path_norms_zero_path():
    ctx = ctx_b05()
    g = Grid(5.0, 11)
    p = GridPath.zeros(g, 2)
    assert l2_norm(ctx, p) == 0.0
    assert w12_norm(ctx, p, p.derivative()) == 0.0
    assert linf_norm(ctx, p) == 0.0


def test_l2_constant_path_closed_form():
    # constant (0, 1) on [-T, T]: closed-form quadrature sqrt(2T/(1-|b|^2))
    ctx = ctx_b05()
    g = Grid(7.0, 201)
    p = GridPath(g, np.column_stack([np.zeros(201), np.ones(201)]))
    assert l2_norm(ctx, p) == pytest.approx(np.sqrt(2 * 7.0 / 0.75), rel=1e-12)


def test_l2_grid_refinement_second_order():
    # Richardson oracle: errors of the deviation-from-sign norm shrink 4x
    tr = model.ProblemTriple(A=[[2.0]], b=[0.5])
    ctx = WeightContext(0.1, tr.b)
    vals = []
    for m in (251, 501, 1001):
        g = Grid(10.0, m)
        t = g.times()
        dev = model.limit_solution(tr, t)
        dev[:, -1] -= np.sign(t + 1e-300)
        vals.append(l2_norm(ctx, GridPath(g, dev)))
    r1, r2 = vals[0] - vals[1], vals[1] - vals[2]
    assert r1 / r2 == pytest.approx(4.0, rel=0.2)


def test_linf_norm_formula():
    ctx = ctx_b05(0.2)
    g = Grid(1.0, 5)
    vals = np.zeros((5, 2))
    vals[2] = [3.0, -0.5]
    p = GridPath(g, vals)
    assert linf_norm(ctx, p) == pytest.approx(0.2 * 3.0 + 0.5)


def test_sobolev_ratio_bounded_over_eps_sweep():
    # bump (0, exp(-t^2)): the scaled sup-to-W12 ratios admit one bound
    g = Grid(10.0, 801)
    t = g.times()
    ratios = []
    for eps in (0.2, 0.1, 0.05):
        ctx = WeightContext(eps, np.array([0.5]))
        p = GridPath(g, np.column_stack([np.zeros(g.m), np.exp(-t**2)]))
        ratios.append(sobolev_ratio(ctx, p, p.derivative()))
    assert max(ratios) < 1.0     # measured common constant, reported below
    assert min(ratios) > 0.0


def test_sobolev_ratio_scaling_invariance():
    ctx = ctx_b05()
    g = Grid(5.0, 201)
    t = g.times()
    p = GridPath(g, np.column_stack([np.exp(-(t - 1) ** 2), np.exp(-t**2)]))
    r1 = sobolev_ratio(ctx, p, p.derivative())
    q = 17.3 * p
    r2 = sobolev_ratio(ctx, q, q.derivative())
    assert r1 == pytest.approx(r2, rel=1e-12)


def test_sobolev_ratio_rejects_zero_path():
    ctx = ctx_b05()
    g = Grid(1.0, 5)
    p = GridPath.zeros(g, 2)
    with pytest.raises(ValueError):
        sobolev_ratio(ctx, p, p.derivative())


def test_sobolev_ratio_limit_derivative_finite():
    tr = model.ProblemTriple(A=[[2.0]], b=[0.5])
    g = Grid(15.0, 601)
    p = GridPath(g, model.limit_solution_dt(tr, g.times()))
    r = sobolev_ratio(WeightContext(0.1, tr.b), p, p.derivative())
    assert np.isfinite(r) and r > 0


def test_mismatched_grids_rejected():
    ctx = ctx_b05()
    p1 = GridPath.zeros(Grid(1.0, 5), 2)
    p2 = GridPath.zeros(Grid(1.0, 7), 2)
    with pytest.raises(ValueError):
        w12_norm(ctx, p1, p2.derivative())
    with pytest.raises(ValueError):
        norms.l2_inner(ctx, p1, p2)


def test_metric_sandwich_with_small_h():
    # g(eta, eta) within [1/4, 4/(1-|b|^2)] of the unweighted quadratic when
    # the perturbation at the scaled argument is below M*eps
    rng = np.random.default_rng(9)
    S = np.array([[0.4, 0.1], [0.1, 0.3]])
    h = model.AffinePerturbation(S, (np.zeros((2, 2)),), np.zeros((2, 2)))
    tr = model.ProblemTriple(A=[[2.0]], b=[0.5], h=h)
    for eps in (0.05, 0.02):
        for _ in range(40):
            p = model.Point(rng.normal(size=1), rng.uniform(-1.5, 1.5))
            Hval = tr.h(eps, eps**2 * p.x, eps * p.z)
            assert np.linalg.norm(Hval, 2) <= 0.6 * eps   # inside the regime
            g = np.linalg.inv(model.metric_inverse(tr, eps, p))
            eta = rng.normal(size=2)
            q = eta @ g @ eta
            base = eps**2 * eta[0] ** 2 + eta[1] ** 2
            assert q >= 0.25 * base
            assert q <= 4.0 / (1.0 - tr.bnorm2) * base


def test_derivative_second_order():
    g = Grid(2.0, 401)
    t = g.times()
    p = GridPath(g, np.column_stack([np.sin(t), np.cos(2 * t)]))
    d = p.derivative()
    exact = np.column_stack([np.cos(t), -2 * np.sin(2 * t)])
    assert np.abs(d.values - exact).max() < 5e-5   # ~ dt^2
