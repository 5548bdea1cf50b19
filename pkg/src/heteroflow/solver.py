"""Newton-on-slice solver, time-shift projection, and the stiff integrator.

The Newton scheme iterates corrections constrained to the range of D*: each
step solves  dF(0) D* y_k = -F(Delta_k)  by the normal equations (plus the
geometric slice iteration when h != 0), and accumulates
Delta_{k+1} = Delta_k + D* y_k.  The linearization stays frozen at the base
path, so convergence is linear with an O(sqrt(eps)) factor once inside the
basin.
"""
from __future__ import annotations

from dataclasses import dataclass, field
import json
import os

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import minimize_scalar

from . import model, operators
from .model import Point, ProblemTriple
from .norms import Grid, GridPath, WeightContext, l2_inner, l2_norm, linf_norm, w12_norm


class NewtonDivergenceError(RuntimeError):
    def __init__(self, msg, residuals=None):
        super().__init__(msg)
        self.residuals = residuals or []


class ShiftBasinError(RuntimeError):
    """No sign change of the shift residual on the search bracket."""


@dataclass
class NewtonOptions:
    max_iters: int = 50
    residual_tol: float = 1e-10       # absolute, in the weighted L2 norm
    record_contraction: bool = True


@dataclass
class Solution:
    """A converged heteroclinic: gamma = gamma0 + eta with eta in range(D*)."""

    eps: float
    eta: GridPath
    gamma: GridPath
    residuals: list
    slice_certificate: float
    eta_w12: float
    eta_linf_scaled: float           # eps^(1/2) * |eta|_{Linf_eps}
    iterations: int
    system: object = field(default=None, repr=False)
    damped: bool = False             # line search engaged during the iteration

    def save(self, directory: str):
        os.makedirs(directory, exist_ok=True)
        meta = {
            "eps": self.eps,
            "residuals": [float(r) for r in self.residuals],
            "slice_certificate": self.slice_certificate,
            "eta_w12": self.eta_w12,
            "eta_linf_scaled": self.eta_linf_scaled,
            "iterations": self.iterations,
            "grid": {"T": self.gamma.grid.T, "m": self.gamma.grid.m},
        }
        with open(os.path.join(directory, "solution.json"), "w", encoding="utf-8") as fh:
            json.dump(meta, fh, indent=2)
        header = ",".join(["t"] + [f"x{i}" for i in range(self.gamma.n - 1)] + ["z"])
        data = np.column_stack([self.gamma.grid.times(), self.gamma.values])
        np.savetxt(os.path.join(directory, "samples.csv"), data,
                   delimiter=",", header=header, comments="")


def newton_solve(triple: ProblemTriple, eps: float, grid: Grid,
                 opts: NewtonOptions | None = None,
                 initial_guess: GridPath | None = None,
                 system: operators.LinearizedSystem | None = None) -> Solution:
    """Find the connecting orbit near the limit solution.

    The linearization stays frozen at the base path; each iteration solves
    for a correction D* y_k on the slice from the current residual.  Near
    the base the map contracts with an O(sqrt(eps)) factor and full steps
    are taken; far seeds (large injected shifts) can make the frozen-map
    iteration spiral, so a step is damped whenever the full update fails to
    reduce the residual.  The initial iterate is eta = 0 unless a guess is
    supplied as an experiment knob.  Raises NewtonDivergenceError with the
    residual history on failure.
    """
    if not 0.0 < eps < 1.0:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")
    opts = opts or NewtonOptions()
    ctx = WeightContext(eps, triple.b)
    sys = system if system is not None else operators.assemble(ctx, grid, triple)

    if initial_guess is not None:
        delta = sys.flat(initial_guess).copy()
        delta[: sys.n] = 0.0
        delta[-sys.n:] = 0.0
    else:
        delta = np.zeros(sys.size)

    A_mat = None if sys.triple.h.is_zero else operators.dF_eps(sys)

    def res_at(d):
        r = operators.F_eps(sys, sys.path(d))
        return r, l2_norm(ctx, r)

    def chord_step(r):
        rhs = sys.path(-sys.flat(r))
        if A_mat is None:
            return sys.Dstar @ sys.ddstar_solve(sys.flat(rhs))
        eta_k, _ = operators.slice_solve(sys, A_mat, rhs, tol=1e-12,
                                         tol_abs=0.05 * opts.residual_tol)
        return sys.flat(eta_k)

    def gauss_step(d, r):
        eta_k = sys.path(d)
        J = operators.dF_eps(sys, eta_k)
        # the near-kernel of the relinearized operator is the flow
        # direction of the current iterate
        dgamma = eta_k.derivative().values
        if sys.base_is_limit:
            dgamma = dgamma + model.limit_solution_dt(triple, grid.times())
        else:
            dgamma = dgamma + sys.base_path.derivative().values
        return sys.flat(operators.slice_linear_solve(
            sys, J, sys.path(-sys.flat(r)), kernel_path=GridPath(grid, dgamma)))

    damped = False
    converged = False
    mode = "chord"
    r, res = res_at(delta)
    residuals = [res]
    for _ in range(opts.max_iters):
        if res <= opts.residual_tol:
            converged = True
            break
        if not np.isfinite(res):
            raise NewtonDivergenceError("Newton residual is not finite", residuals)
        step = chord_step(r) if mode == "chord" else gauss_step(delta, r)
        new_delta = delta + step
        new_r, new_res = res_at(new_delta)
        if new_res >= res:
            for alpha in (0.5, 0.25, 0.125, 0.0625):
                cand = delta + alpha * step
                cand_r, cand_res = res_at(cand)
                if cand_res < res:
                    damped = True
                    new_delta, new_r, new_res = cand, cand_r, cand_res
                    break
            else:
                if mode == "chord":
                    # frozen operator stopped descending: relinearize
                    mode = "gauss"
                    damped = True
                    continue
                raise NewtonDivergenceError(
                    f"Newton iteration cannot reduce the residual below "
                    f"{res:.3e} after {len(residuals) - 1} steps", residuals)
        delta, r, res = new_delta, new_r, new_res
        residuals.append(res)
    converged = converged or res <= opts.residual_tol
    if not converged:
        raise NewtonDivergenceError(
            f"no convergence after {opts.max_iters} iterations "
            f"(last residual {residuals[-1]:.3e})", residuals)

    eta = sys.path(delta)
    gamma = sys.base_path + eta
    w_eps = operators.kernel_vector(sys)
    cert = abs(l2_inner(ctx, w_eps, eta))
    return Solution(
        eps=eps,
        eta=eta,
        gamma=gamma,
        residuals=residuals,
        slice_certificate=cert,
        eta_w12=w12_norm(ctx, eta, eta.derivative()),
        eta_linf_scaled=float(np.sqrt(eps)) * linf_norm(ctx, eta),
        iterations=len(residuals) - 1,
        system=sys,
        damped=damped,
    )


# ---------------------------------------------------------------------------
# time-shift projection and alignment
# ---------------------------------------------------------------------------

def shift_path(path: GridPath, tau: float) -> GridPath:
    """Resample t -> t + tau by cubic interpolation, clamping to the grid
    edge values (paths of interest are constant to machine precision there)."""
    t = path.grid.times()
    spline = CubicSpline(t, path.values, axis=0, bc_type="natural")
    tq = np.clip(t + tau, t[0], t[-1])
    return GridPath(path.grid, spline(tq))


def time_shift_project(sys: operators.LinearizedSystem, gamma: GridPath):
    """Find tau with <w, gamma_tau - gamma0>_{L2_eps} = 0.

    Bracketed bisection on the shift residual over [-1, 1]/(1 - |b|^2)
    followed by a secant polish.  Returns (tau, shifted path).  Raises
    ShiftBasinError when the residual does not change sign on the bracket.
    """
    ctx = sys.ctx
    w = operators.kernel_vector(sys)
    base = sys.base_path
    wn = l2_norm(ctx, w)

    def rho(tau: float) -> float:
        return l2_inner(ctx, w, shift_path(gamma, tau) - base)

    R = 1.0 / (1.0 - ctx.bnorm2)
    a, b = -R, R
    fa, fb = rho(a), rho(b)
    if fa == 0.0:
        return a, shift_path(gamma, a)
    if fb == 0.0:
        return b, shift_path(gamma, b)
    if np.sign(fa) == np.sign(fb):
        raise ShiftBasinError(
            "shift residual has no sign change on the bracket: path is "
            "outside the shift basin")
    for _ in range(80):
        mid = 0.5 * (a + b)
        fm = rho(mid)
        if fm == 0.0:
            a = b = mid
            break
        if np.sign(fm) == np.sign(fa):
            a, fa = mid, fm
        else:
            b, fb = mid, fm
        if b - a <= 1e-14 * max(1.0, R):
            break
    tau = 0.5 * (a + b)
    # secant polish
    t0, t1 = a, b if b > a else a + 1e-9
    f0, f1 = fa, fb
    for _ in range(4):
        if f1 == f0:
            break
        t2 = t1 - f1 * (t1 - t0) / (f1 - f0)
        t0, f0, t1, f1 = t1, f1, t2, rho(t2)
        tau = t1
    shifted = shift_path(gamma, tau)
    resid = abs(rho(tau))
    tol = 1e-9 * wn * l2_norm(ctx, shifted - base) + 1e-12
    if resid > tol:
        raise RuntimeError(f"shift root-finding stalled: |rho| = {resid:.3e} > {tol:.3e}")
    return tau, shifted


def align_and_compare(ctx: WeightContext, g1: GridPath, g2: GridPath,
                      bracket: float | None = None):
    """Minimise |shift(g1, tau) - g2|_{L2_eps} over tau; returns (tau*, dist)."""
    if g1.grid != g2.grid:
        raise ValueError("paths live on different grids")
    R = bracket if bracket is not None else 1.0 / (1.0 - ctx.bnorm2)

    def dist(tau: float) -> float:
        return l2_norm(ctx, shift_path(g1, tau) - g2)

    res = minimize_scalar(dist, bounds=(-R, R), method="bounded",
                          options={"xatol": 1e-12})
    return float(res.x), float(res.fun)


# ---------------------------------------------------------------------------
# stiff forward integration
# ---------------------------------------------------------------------------

@dataclass
class IntegrateOptions:
    dt_out: float | None = None      # output node spacing
    dt_int: float | None = None      # internal step target (default min(dt_out, eps/10))
    newton_tol: float = 1e-12
    max_newton: int = 30


def _wz_field(triple: ProblemTriple, eps: float, w: np.ndarray, z: float):
    """Velocity of the (w, z) system; the fast part is -A_eps(z) w / eps."""
    Aw = model.A_eps(triple, eps, z) @ w
    r = triple.rate
    if triple.h.is_zero:
        Rx = np.zeros(triple.n - 1)
        Rz = 0.0
    else:
        x = triple.A_inv() @ (w + triple.b * (1.0 - z * z))
        Rx, Rz = model.remainder(triple, eps, Point(x, z))
    tw = triple.A @ Rx + 2.0 * triple.b * z * (r * (1.0 - z * z) + Rz)
    wdot = -Aw / eps + tw
    zdot = -float(triple.b @ w) + r * (1.0 - z * z) + Rz
    return wdot, zdot


def _wz_jacobian_h0(triple: ProblemTriple, eps: float, w: np.ndarray, z: float):
    """Analytic Jacobian of the (w, z) field for h == 0; for h != 0 it is an
    O(eps)-accurate approximation, still good enough for the per-step Newton."""
    n = triple.n
    r = triple.rate
    J = np.empty((n, n))
    J[:-1, :-1] = -model.A_eps(triple, eps, z) / eps
    J[:-1, -1] = -2.0 * triple.b * float(triple.b @ w) + 2.0 * triple.b * r * (1.0 - 3.0 * z * z)
    J[-1, :-1] = -triple.b
    J[-1, -1] = -2.0 * r * z
    return J


def integrate(triple: ProblemTriple, eps: float, start: Point, t_span,
              opts: IntegrateOptions | None = None) -> GridPath:
    """Forward flow by the implicit midpoint rule on the (w, z) system.

    The output grid is symmetric around the midpoint of t_span: node t_i of
    the returned path holds the state at absolute time
    t_span[0] + (t_i + T) with T = (t_span[1] - t_span[0]) / 2; the initial
    condition sits at the first node.  Values are returned in (x, z)
    coordinates.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    opts = opts or IntegrateOptions()
    t0, t1 = float(t_span[0]), float(t_span[1])
    if not t1 > t0:
        raise ValueError("t_span must be increasing")
    span = t1 - t0
    dt_out = opts.dt_out if opts.dt_out is not None else min(0.01, eps / 10.0)
    m_out = int(np.ceil(span / dt_out)) + 1
    if m_out % 2 == 0:
        m_out += 1
    m_out = max(m_out, 3)
    dt_out = span / (m_out - 1)
    dt_target = opts.dt_int if opts.dt_int is not None else min(dt_out, eps / 10.0)
    n_sub = max(1, int(np.ceil(dt_out / dt_target)))
    h = dt_out / n_sub
    if h < 1e-14 * max(1.0, span):
        raise RuntimeError("step-size underflow: stiffness not resolved")

    wp = model.to_w(triple, start)
    y = np.append(wp.w, wp.z)
    n = triple.n
    out = np.empty((m_out, n))

    def store(i, yv):
        x = triple.A_inv() @ (yv[:-1] + triple.b * (1.0 - yv[-1] ** 2))
        out[i, :-1] = x
        out[i, -1] = yv[-1]

    store(0, y)
    I = np.eye(n)
    for i in range(1, m_out):
        for _ in range(n_sub):
            fw, fz = _wz_field(triple, eps, y[:-1], y[-1])
            u = y + h * np.append(fw, fz)        # explicit predictor
            ok = False
            for _ in range(opts.max_newton):
                mid = 0.5 * (y + u)
                fw, fz = _wz_field(triple, eps, mid[:-1], mid[-1])
                G = u - y - h * np.append(fw, fz)
                gn = np.linalg.norm(G)
                if gn <= opts.newton_tol * max(1.0, np.linalg.norm(u)):
                    ok = True
                    break
                J = I - 0.5 * h * _wz_jacobian_h0(triple, eps, mid[:-1], mid[-1])
                u = u - np.linalg.solve(J, G)
            if not ok:
                raise RuntimeError(
                    f"implicit midpoint step failed to converge at output node {i} "
                    f"(h = {h:.3e}); reduce dt_int")
            y = u
        store(i, y)
    return GridPath(Grid(span / 2.0, m_out), out)
