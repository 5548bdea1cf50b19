"""Experiment layer: energy, decay rates, eps-convergence, transversality
margins, and uniqueness up to time-shift.

Every constant the analysis only proves to exist (norm-equivalence and
surjectivity constants, quadratic-estimate constants, basins) is measured
here and reported; the few exact values available (energy 4/3, potential
values -+2/3, the decay floor 1 - |b|^2, the closed form of K) are asserted
at the stated tolerances by the acceptance suite.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model, operators, solver
from .model import Point, ProblemTriple
from .norms import Grid, GridPath, WeightContext, l2_norm, linf_norm, w12_norm


def random_smooth_path(grid: Grid, n: int, rng, bumps: int = 6,
                       interior: float = 0.5, amplitude: float = 1.0) -> GridPath:
    """Random superposition of Gaussian bumps, compactly supported well away
    from the boundary nodes; the standard smooth test path for operator
    identities."""
    t = grid.times()
    vals = np.zeros((grid.m, n))
    span = interior * grid.T
    for _ in range(bumps):
        c = rng.uniform(-span, span)
        w = rng.uniform(0.5, 2.5)
        k = rng.integers(0, n)
        vals[:, k] += rng.normal() * np.exp(-((t - c) / w) ** 2)
    peak = np.abs(vals).max()
    if peak > 0:
        vals *= amplitude / peak
    return GridPath(grid, vals)


def default_solve_grid(triple: ProblemTriple, eps: float,
                       T: float | None = None, m: int | None = None) -> Grid:
    """Grid policy for solves: T = 20/(1-|b|^2) puts the limit orbit within
    exp(-40) of its endpoints; dt resolves both the slow scale and eps."""
    r = triple.rate
    T = T if T is not None else 20.0 / r
    if m is None:
        dt = min(0.02 / r, eps / 5.0)
        m = int(np.ceil(2.0 * T / dt)) + 1
        if m % 2 == 0:
            m += 1
    return Grid(T, m)


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------

def energy(triple: ProblemTriple, eps: float, path: GridPath,
           interval: tuple | None = None) -> float:
    """Quadrature of the kinetic density g(gamma', gamma') over the grid (or
    a sub-interval).  For exact trajectories this telescopes to the potential
    drop f(start) - f(end); the full-line value on the connecting orbit is 4/3.
    """
    t = path.grid.times()
    dvals = path.derivative().values
    if triple.h.is_zero:
        ctx = WeightContext(eps, triple.b)
        from .norms import pointwise_norm_sq_many

        density = pointwise_norm_sq_many(ctx, dvals)
    else:
        ginvs = np.array([
            model.metric_inverse(triple, eps, Point(path.values[i, :-1], path.values[i, -1]))
            for i in range(path.grid.m)
        ])
        gs = np.linalg.inv(ginvs)
        density = np.einsum("ma,mab,mb->m", dvals, gs, dvals)
    if interval is None:
        return float(np.trapezoid(density, t))
    mask = (t >= interval[0] - 1e-12) & (t <= interval[1] + 1e-12)
    return float(np.trapezoid(density[mask], t[mask]))


def potential_drop(triple: ProblemTriple, eps: float, path: GridPath) -> float:
    """f(start) - f(end) along a path; equals the energy for exact solutions."""
    first = Point(path.values[0, :-1], path.values[0, -1])
    last = Point(path.values[-1, :-1], path.values[-1, -1])
    return model.potential(triple, eps, first) - model.potential(triple, eps, last)


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------

@dataclass
class DecayReport:
    fitted_rate_plus: float
    fitted_rate_minus: float
    paper_floor: float
    passed: bool
    samples_plus: int = 0
    samples_minus: int = 0


def decay_fit(ctx: WeightContext, path: GridPath, tail_fraction: float = 0.25,
              noise_floor: float = 1e-13) -> DecayReport:
    """Fit exponential tail rates of eps^2 |x|^2 + |z -+ 1|^2 at both ends.

    The usable window on each side runs from tail_fraction of the last
    above-floor time out to that time; a linear fit of log(deviation) gives
    the rate.  Fewer than 50 usable samples raises (tail under-resolved).
    The reported floor is the uniform rate 1 - |b|^2; the sharp asymptotic
    is 4 (1 - |b|^2).
    """
    t = path.grid.times()
    floor_rate = 1.0 - ctx.bnorm2

    def one_side(sign: int):
        dev = (ctx.eps**2 * np.sum(path.xi**2, axis=1)
               + (path.zeta - float(sign)) ** 2)
        ts = sign * t
        usable = (ts > 0) & (dev >= noise_floor)
        if not usable.any():
            raise ValueError("decay tail under-resolved: no samples above the noise floor")
        t_max = ts[usable].max()
        window = usable & (ts >= tail_fraction * t_max)
        count = int(window.sum())
        if count < 50:
            raise ValueError(f"decay tail under-resolved: only {count} samples in the window")
        slope = np.polyfit(ts[window], np.log(dev[window]), 1)[0]
        return -float(slope), count

    rate_plus, n_plus = one_side(+1)
    rate_minus, n_minus = one_side(-1)
    passed = min(rate_plus, rate_minus) >= 0.9 * floor_rate
    return DecayReport(fitted_rate_plus=rate_plus, fitted_rate_minus=rate_minus,
                       paper_floor=floor_rate, passed=passed,
                       samples_plus=n_plus, samples_minus=n_minus)


# ---------------------------------------------------------------------------
# eps-convergence study
# ---------------------------------------------------------------------------

@dataclass
class ConvergenceReport:
    eps_list: list
    error_w12: list
    error_linf: list               # eps^(1/2) |gamma_eps - gamma0|_{Linf_eps}
    slope_w12: float
    slope_linf: float
    excluded: list = field(default_factory=list)
    exact: bool = False

    def passed(self, lo: float = 0.9, hi: float = 1.5) -> bool:
        if self.exact:
            return True
        return lo <= self.slope_w12 <= hi and lo <= self.slope_linf <= hi


def convergence_study(triple: ProblemTriple, eps_list, grid_policy=None,
                      newton_opts=None, workers: int = 1) -> ConvergenceReport:
    """Solve across an eps sweep and fit the log-log slope of the deviation
    from the limit orbit (expected order one in both scaled norms)."""
    eps_list = sorted(eps_list, reverse=True)
    if any(not 0 < e < 1 for e in eps_list):
        raise ValueError("all eps must lie in (0, 1)")
    policy = grid_policy or default_solve_grid

    def solve_one(eps):
        try:
            sol = solver.newton_solve(triple, eps, policy(triple, eps), newton_opts)
            return eps, sol, None
        except solver.NewtonDivergenceError as exc:
            return eps, None, str(exc)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(solve_one, eps_list))
    else:
        results = [solve_one(e) for e in eps_list]

    eps_ok, err_w, err_i, excluded = [], [], [], []
    for eps, sol, err in results:
        if sol is None:
            excluded.append((eps, err))
            continue
        eps_ok.append(eps)
        err_w.append(sol.eta_w12)
        err_i.append(sol.eta_linf_scaled)
    if all(e < 1e-12 for e in err_w):
        return ConvergenceReport(eps_ok, err_w, err_i, float("nan"), float("nan"),
                                 excluded=excluded, exact=True)
    slope_w = float(np.polyfit(np.log(eps_ok), np.log(err_w), 1)[0])
    slope_i = float(np.polyfit(np.log(eps_ok), np.log(err_i), 1)[0])
    return ConvergenceReport(eps_ok, err_w, err_i, slope_w, slope_i, excluded=excluded)


# ---------------------------------------------------------------------------
# transversality
# ---------------------------------------------------------------------------

def transversality_margin(sys: operators.LinearizedSystem,
                          solution: solver.Solution, q: int = 64) -> float:
    """Smallest eps-weighted singular value of the linearization at the
    converged solution, restricted to the measured slice (the L2_eps
    orthogonal complement of the kernel direction) and to resolved
    directions.  Strictly positive margins certify transversality."""
    J = operators.dF_eps(sys, solution.eta)
    G = sys.gram_l2()
    K = (J.T @ G @ J).tocsr()
    c = G @ sys.flat(operators.kernel_vector(sys))
    return operators.sigma_min_subspace(sys, K, border=c, q=q)


def rayleigh_on_direction(sys: operators.LinearizedSystem, J, path: GridPath) -> float:
    """|J v|_{L2_eps} / |v|_{W12_eps} for a single direction; evaluating it
    on the kernel vector is the rank-deficiency negative control."""
    v = sys.flat(path)
    G = sys.gram_l2()
    H = sys.gram_w12()
    return float(np.sqrt((J @ v) @ (G @ (J @ v)) / (v @ (H @ v))))


# ---------------------------------------------------------------------------
# uniqueness experiments
# ---------------------------------------------------------------------------

@dataclass
class UniquenessReport:
    max_aligned_distance: float
    distances: list                # (i, j, tau, dist) for converged pairs
    failed_seeds: list             # (index, message)
    gamma_scale: float


def uniqueness_study(triple: ProblemTriple, eps: float, seeds,
                     grid: Grid | None = None, newton_opts=None) -> UniquenessReport:
    """Run the solver from several initial guesses and align all converged
    trajectories pairwise; seeds outside the basin are reported, not fatal."""
    grid = grid or default_solve_grid(triple, eps)
    ctx = WeightContext(eps, triple.b)
    sys = operators.assemble(ctx, grid, triple)
    sols, failed = [], []
    for k, seed in enumerate(seeds):
        try:
            sols.append(solver.newton_solve(triple, eps, grid, newton_opts,
                                            initial_guess=seed, system=sys))
        except solver.NewtonDivergenceError as exc:
            failed.append((k, str(exc)))
    if len(sols) < 2 and seeds and len(list(seeds)) >= 2:
        raise RuntimeError(
            f"uniqueness study needs at least two converged runs; failures: {failed}")
    dists = []
    maxd = 0.0
    for i in range(len(sols)):
        for j in range(i + 1, len(sols)):
            tau, dist = solver.align_and_compare(ctx, sols[i].gamma, sols[j].gamma)
            dists.append((i, j, tau, dist))
            maxd = max(maxd, dist)
    scale = max(1.0, l2_norm(ctx, sols[0].gamma)) if sols else 1.0
    return UniquenessReport(max_aligned_distance=maxd, distances=dists,
                            failed_seeds=failed, gamma_scale=scale)


def shooting_comparison(triple: ProblemTriple, eps: float, solution: solver.Solution,
                        delta: float = 1e-6, dt_int: float = 1e-3) -> float:
    """Integrate forward from the one-dimensional unstable direction at
    (0, -1) and align the trajectory against the solver output.

    The integrated orbit is re-centred at its z = 0 crossing; grid times
    before the launch are filled with the linearised unstable-mode
    asymptotics (error O(delta)).  Returns the aligned L2_eps distance.
    """
    grid = solution.gamma.grid
    r = triple.rate
    z0 = -1.0 + delta
    start = model.from_w(triple, model.WPoint(np.zeros(triple.n - 1), z0))
    # time from the launch to the z = 0 crossing, plus the forward half
    t_cross = np.arctanh(-z0) / r
    span = t_cross + grid.T + 2.0
    raw = solver.integrate(triple, eps, start, (0.0, span),
                           solver.IntegrateOptions(dt_out=min(0.01, grid.dt), dt_int=dt_int))
    t_raw = raw.grid.times() + span / 2.0          # flow time since launch
    z_raw = raw.zeta
    i0 = int(np.argmin(np.abs(z_raw)))
    tstar = float(np.interp(0.0, z_raw[max(0, i0 - 3): i0 + 4],
                            t_raw[max(0, i0 - 3): i0 + 4]))

    tq = grid.times() + tstar                      # wanted flow times
    vals = np.empty((grid.m, triple.n))
    inside = tq >= 0.0
    from scipy.interpolate import CubicSpline

    spline = CubicSpline(t_raw, raw.values, axis=0, bc_type="natural")
    vals[inside] = spline(np.clip(tq[inside], t_raw[0], t_raw[-1]))
    if (~inside).any():
        zfill = -1.0 + delta * np.exp(2.0 * r * tq[~inside])
        vals[~inside, -1] = zfill
        vals[~inside, :-1] = (1.0 - zfill**2)[:, None] * (triple.A_inv() @ triple.b)
    candidate = GridPath(grid, vals)
    ctx = WeightContext(eps, triple.b)
    _, dist = solver.align_and_compare(ctx, candidate, solution.gamma)
    return dist
