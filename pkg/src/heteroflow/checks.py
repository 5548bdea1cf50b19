"""The acceptance checks, one function per criterion.

Each check returns a CheckResult carrying the pass/fail verdict, measured
numbers, and CSV-ready tables; the command line wraps these with file
output, and the acceptance test suite asserts on them directly.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from . import conley, model, operators, solver, verify
from .model import ProblemTriple
from .norms import Grid, GridPath, WeightContext, l2_inner, l2_norm, w12_norm


@dataclass
class CheckResult:
    name: str
    passed: bool
    details: dict
    tables: dict = field(default_factory=dict)   # name -> (header, rows)
    runtime: float = 0.0


def _timed(fn):
    def wrapper(*args, **kwargs):
        t0 = time.perf_counter()
        out = fn(*args, **kwargs)
        out.runtime = time.perf_counter() - t0
        out.details["runtime_s"] = round(out.runtime, 3)
        return out
    return wrapper


def _diag_grid(triple: ProblemTriple, m: int = 801) -> Grid:
    return Grid(20.0 / triple.rate, m)


# ---------------------------------------------------------------------------
# 1. trivial-metric exactness
# ---------------------------------------------------------------------------

@_timed
def check_trivial(triple: ProblemTriple, eps_list=(0.2, 0.1, 0.05)) -> CheckResult:
    """With b = 0 and h = 0 the limit orbit solves the flow for every eps:
    the solver must accept eta = 0 at residual < 1e-12 without iterating."""
    rows = []
    ok = True
    for eps in eps_list:
        sol = solver.newton_solve(triple, eps, verify.default_solve_grid(triple, eps),
                                  solver.NewtonOptions(residual_tol=1e-12))
        good = sol.iterations == 0 and sol.residuals[0] < 1e-12
        ok = ok and good
        rows.append((eps, sol.residuals[0], sol.iterations, good))
    return CheckResult("trivial", ok, {"eps_list": list(eps_list)},
                       {"trivial": (("eps", "residual", "iterations", "passed"), rows)})


# ---------------------------------------------------------------------------
# 2. energy
# ---------------------------------------------------------------------------

@_timed
def check_energy(triple: ProblemTriple, eps: float = 0.05, m: int = 65537,
                 tol: float = 1e-6) -> CheckResult:
    """Full-line energy of the converged orbit equals the potential drop
    4/3 between the rest points, to quadrature accuracy."""
    grid = verify.default_solve_grid(triple, eps, m=m)
    sol = solver.newton_solve(triple, eps, grid)
    E = verify.energy(triple, eps, sol.gamma)
    drop = verify.potential_drop(triple, eps, sol.gamma)
    err = abs(E - 4.0 / 3.0)
    ident = abs(E - drop)
    passed = err <= tol and ident <= tol
    return CheckResult("energy", passed,
                       {"eps": eps, "m": m, "energy": E, "error": err,
                        "identity_defect": ident},
                       {"energy": (("eps", "m", "energy", "error", "identity_defect"),
                                   [(eps, m, E, err, ident)])})


# ---------------------------------------------------------------------------
# 3. O(eps) convergence
# ---------------------------------------------------------------------------

@_timed
def check_convergence(triple: ProblemTriple,
                      eps_list=(0.2, 0.1, 0.05, 0.025),
                      lo: float = 0.9, hi: float = 1.5) -> CheckResult:
    """Log-log slopes of the deviation from the limit orbit across the eps
    sweep, in the weighted W12 norm and the sqrt(eps)-scaled sup norm."""
    rep = verify.convergence_study(triple, list(eps_list))
    rows = list(zip(rep.eps_list, rep.error_w12, rep.error_linf))
    if rep.exact:
        passed = True
    else:
        passed = (lo <= rep.slope_w12 <= hi) and (lo <= rep.slope_linf <= hi)
    return CheckResult("convergence", passed,
                       {"slope_w12": rep.slope_w12, "slope_linf": rep.slope_linf,
                        "exact": rep.exact, "window": [lo, hi],
                        "excluded": rep.excluded},
                       {"convergence": (("eps", "error_w12", "error_linf_scaled"), rows)})


# ---------------------------------------------------------------------------
# 4. decay rates
# ---------------------------------------------------------------------------

@_timed
def check_decay(triple: ProblemTriple, eps: float = 0.05) -> CheckResult:
    """Tail rates of the squared deviation from the rest points: at least
    0.9 (1 - |b|^2) at both ends for the converged orbit, and at least 3.5
    in the uncoupled b = 0 case (sharp value 4)."""
    sol = solver.newton_solve(triple, eps, verify.default_solve_grid(triple, eps))
    ctx = WeightContext(eps, triple.b)
    rep = verify.decay_fit(ctx, sol.gamma)

    triple0 = ProblemTriple(A=triple.A, b=np.zeros(triple.n - 1))
    grid0 = verify.default_solve_grid(triple0, eps)
    gamma0 = GridPath(grid0, model.limit_solution(triple0, grid0.times()))
    rep0 = verify.decay_fit(WeightContext(eps, triple0.b), gamma0)

    passed = rep.passed and min(rep0.fitted_rate_plus, rep0.fitted_rate_minus) >= 3.5
    rows = [("general", rep.fitted_rate_plus, rep.fitted_rate_minus, rep.paper_floor),
            ("b=0", rep0.fitted_rate_plus, rep0.fitted_rate_minus, 1.0)]
    return CheckResult("decay", passed,
                       {"rate_plus": rep.fitted_rate_plus,
                        "rate_minus": rep.fitted_rate_minus,
                        "floor": rep.paper_floor,
                        "b0_rate_plus": rep0.fitted_rate_plus,
                        "b0_rate_minus": rep0.fitted_rate_minus},
                       {"decay": (("case", "rate_plus", "rate_minus", "floor"), rows)})


# ---------------------------------------------------------------------------
# 5. operator suite
# ---------------------------------------------------------------------------

@_timed
def check_operators(triple: ProblemTriple, eps_list=(0.1, 0.05, 0.02),
                    m: int = 801, seed: int = 20240 ) -> CheckResult:
    """Adjointness defect, the two doubling identities, the kernel structure
    of D, and the stability of the D* floor across the eps sweep."""
    rng = np.random.default_rng(seed)
    details = {}
    ok = True

    # adjointness defect O(dt^2) under one grid refinement
    adj_rows = []
    for mm in (m, 2 * m - 1):
        grid = _diag_grid(triple, mm)
        ctx = WeightContext(eps_list[0], triple.b)
        sys = operators.assemble(ctx, grid, triple)
        pa = verify.random_smooth_path(grid, triple.n, rng)
        pb = verify.random_smooth_path(grid, triple.n, rng)
        lhs = l2_inner(ctx, sys.path(sys.D @ sys.flat(pa)), pb)
        rhs = l2_inner(ctx, pa, sys.path(sys.Dstar @ sys.flat(pb)))
        scale = w12_norm(ctx, pa, pa.derivative()) * w12_norm(ctx, pb, pb.derivative())
        defect = abs(lhs - rhs)
        bound = 1.0 * grid.dt**2 * scale
        adj_rows.append((mm, grid.dt, defect, bound, defect <= bound))
        ok = ok and defect <= bound
    details["adjointness"] = adj_rows

    # doubling identities on 100 random smooth paths
    grid = _diag_grid(triple, m)
    dbl_worst = 0.0
    for eps in eps_list:
        ctx = WeightContext(eps, triple.b)
        sys = operators.assemble(ctx, grid, triple)
        wts = grid.trapezoid_weights()
        gdz = model.limit_solution_dt(triple, grid.times())[:, -1]
        for _ in range(100 // len(eps_list) + 1):
            p = verify.random_smooth_path(grid, triple.n, rng)
            dp = p.derivative()
            q = sys.path(np.einsum("mab,mb->ma", sys.Q, p.values))
            cross = float(wts @ (gdz * p.zeta**2))
            scale = l2_norm(ctx, dp)**2 + l2_norm(ctx, q)**2 + abs(cross)
            for op, sign in ((sys.D, -1.0), (sys.Dstar, +1.0)):
                lhs = l2_norm(ctx, sys.path(op @ sys.flat(p)))**2
                rhs = l2_norm(ctx, dp)**2 + sign * 2.0 * cross + l2_norm(ctx, q)**2
                dbl_worst = max(dbl_worst, abs(lhs - rhs) / (grid.dt**2 * scale))
    details["doubling_worst_constant"] = dbl_worst
    ok = ok and dbl_worst <= 10.0

    # kernel structure and D* floor across eps
    floor_rows = []
    for eps in eps_list:
        ctx = WeightContext(eps, triple.b)
        sys = operators.assemble(ctx, grid, triple)
        ks = operators.kernel_spectrum_summary(sys)
        floor = operators.dstar_sigma_floor(sys)
        kernel_ok = ks["sigma0"] < 1e-6 and ks["sigma1"] >= 1e-6 \
            and ks["gap_ratio"] >= 10.0
        ok = ok and kernel_ok
        floor_rows.append((eps, ks["sigma0"], ks["sigma1"], floor))
    floors = [r[3] for r in floor_rows]
    stable = (max(floors) - min(floors)) <= 0.2 * max(floors) and min(floors) > 0
    ok = ok and stable
    details["dstar_floors"] = floors
    details["dstar_floor_variation"] = (max(floors) - min(floors)) / max(floors)

    return CheckResult("operators", ok, details,
                       {"adjointness": (("m", "dt", "defect", "bound", "passed"), adj_rows),
                        "kernel_floor": (("eps", "sigma0", "sigma1", "dstar_floor"),
                                         floor_rows)})


# ---------------------------------------------------------------------------
# 6. slice certificate and shift recovery
# ---------------------------------------------------------------------------

@_timed
def check_slice_shift(triple: ProblemTriple, eps: float = 0.05) -> CheckResult:
    """The converged correction is orthogonal to the measured kernel, and an
    injected time shift of 0.3 is recovered by the projection to 1e-4."""
    grid = verify.default_solve_grid(triple, eps)
    sol = solver.newton_solve(triple, eps, grid)
    sys = sol.system
    ctx = sys.ctx
    w = operators.kernel_vector(sys)
    wn = l2_norm(ctx, w)
    en = l2_norm(ctx, sol.eta)
    cert_ok = sol.slice_certificate <= 1e-8 * wn * max(en, 1e-300)

    shifted = solver.shift_path(sys.base_path, 0.3)
    tau, _ = solver.time_shift_project(sys, shifted)
    shift_err = abs(tau + 0.3)
    passed = cert_ok and shift_err <= 1e-4
    return CheckResult("slice_shift", passed,
                       {"certificate": sol.slice_certificate,
                        "certificate_bound": 1e-8 * wn * en,
                        "recovered_tau": tau, "shift_error": shift_err},
                       {"slice_shift": (("certificate", "bound", "tau", "shift_error"),
                                        [(sol.slice_certificate, 1e-8 * wn * en,
                                          tau, shift_err)])})


# ---------------------------------------------------------------------------
# 7. Conley geometry
# ---------------------------------------------------------------------------

@_timed
def check_conley(triple: ProblemTriple, eps: float = 0.02, nu: float = 0.25,
                 samples: int = 1000, seed: int = 31415,
                 eps_sweep=(0.1, 0.05, 0.02)) -> CheckResult:
    """Face-sign sweep, heteroclinic containment in N \\ L, the exit-value
    criterion from a face-b launch, and the closed form of K.

    Requires an indefinite fast block (both eigenvalue signs) so that all
    three faces are non-empty.
    """
    details = {"exponent_note": conley.EXPONENT_NOTE}
    lam = np.linalg.eigvalsh(triple.A)
    if lam.min() >= 0 or lam.max() <= 0:
        return CheckResult("conley", False,
                           {"error": "fast block must be indefinite so faces "
                                     "a, b and c are all non-empty"})

    # K closed form at b = 0
    K0 = conley.K_constant(np.zeros(triple.n - 1))
    k_ok = abs(K0 - 8.9567) <= 1e-4
    details["K0"] = K0

    # face sweep at the target eps plus the breakdown scan
    sweep_rows = []
    largest_full_pass = None
    for e in sorted(eps_sweep, reverse=True):
        cfg = conley.ConleyConfig(triple, e, nu=nu)
        res = conley.face_sweep(cfg, samples, np.random.default_rng(seed))
        sweep_rows.extend(res.rows)
        if res.all_pass and largest_full_pass is None:
            largest_full_pass = e
        if e == eps:
            faces_ok = res.all_pass
            details["pass_rates"] = res.pass_rate
    details["largest_full_pass_eps"] = largest_full_pass

    # containment of the converged orbit
    cfg = conley.ConleyConfig(triple, eps, nu=nu)
    sol = solver.newton_solve(triple, eps, verify.default_solve_grid(triple, eps))
    labels = {conley.classify_point(cfg, model.Point(v[:-1], v[-1])).value
              for v in sol.gamma.values}
    contained = labels <= {"interior_NL"}
    details["containment_labels"] = sorted(labels)
    details["apriori"] = conley.apriori_check(cfg, sol.gamma)

    # exit trajectory from a face-b point at z = 1
    lam_e, V = np.linalg.eigh(model.A_eps(triple, eps, 1.0))
    vminus = V[:, lam_e < 0][:, 0]
    p0 = model.from_w(triple, model.WPoint(cfg.r_minus_outer * vminus, 1.0))
    dt_exit = eps / (10.0 * max(1.0, float(np.abs(lam_e).max())))
    path = solver.integrate(triple, eps, p0, (0.0, 100.0 * dt_exit),
                            solver.IntegrateOptions(dt_out=5.0 * dt_exit, dt_int=dt_exit))
    exit_rep = conley.exit_value_check(cfg, path)
    details["exit"] = {"exited": exit_rep.exited, "f_at_exit": exit_rep.f_at_exit}

    passed = bool(k_ok and faces_ok and contained and details["apriori"]
                  and exit_rep.exited and exit_rep.passed)
    return CheckResult("conley", passed, details,
                       {"face_sweep": (("face", "eps", "sample", "rho1_dot",
                                        "rho2_dot", "verdict"), sweep_rows)})


# ---------------------------------------------------------------------------
# 8. uniqueness up to shift
# ---------------------------------------------------------------------------

@_timed
def check_uniqueness(triple: ProblemTriple, eps: float = 0.05, m: int = 10669,
                     seed: int = 2718) -> CheckResult:
    """Solver runs from four distinct seeds align pairwise after shift, and
    a forward-integrated trajectory from the unstable direction at (0,-1)
    lands on the same orbit."""
    grid = Grid(20.0 / triple.rate, m)
    ctx = WeightContext(eps, triple.b)
    sys = operators.assemble(ctx, grid, triple)
    base = sys.base_path
    rng = np.random.default_rng(seed)
    noise = verify.random_smooth_path(grid, triple.n, rng, amplitude=1e-2)
    seeds = [GridPath.zeros(grid, triple.n),
             solver.shift_path(base, 0.5) - base,
             solver.shift_path(base, -0.5) - base,
             noise]
    rep = verify.uniqueness_study(triple, eps, seeds, grid=grid)
    tol = 1e-6 * rep.gamma_scale

    sol = solver.newton_solve(triple, eps, grid, system=sys)
    shoot = verify.shooting_comparison(triple, eps, sol)
    passed = (not rep.failed_seeds and rep.max_aligned_distance <= tol
              and shoot <= 1e-4)
    rows = [(i, j, tau, d) for i, j, tau, d in rep.distances]
    return CheckResult("uniqueness", passed,
                       {"max_aligned_distance": rep.max_aligned_distance,
                        "tolerance": tol, "failed_seeds": rep.failed_seeds,
                        "shooting_distance": shoot},
                       {"uniqueness": (("i", "j", "tau", "distance"), rows)})


# ---------------------------------------------------------------------------
# 9. transversality
# ---------------------------------------------------------------------------

@_timed
def check_transversality(triple: ProblemTriple, eps_list=(0.1, 0.05, 0.02),
                         m: int = 801) -> CheckResult:
    """Restricted smallest singular value of the linearization at the
    solution: positive and stable across the eps sweep."""
    grid = _diag_grid(triple, m)
    rows = []
    for eps in eps_list:
        sol = solver.newton_solve(triple, eps, grid)
        margin = verify.transversality_margin(sol.system, sol)
        rows.append((eps, margin))
    margins = [r[1] for r in rows]
    variation = (max(margins) - min(margins)) / max(margins)
    passed = min(margins) > 0 and variation < 0.5
    return CheckResult("transversality", passed,
                       {"margins": margins, "variation": variation},
                       {"transversality": (("eps", "margin"), rows)})


ALL_CHECKS = {
    "trivial": check_trivial,
    "energy": check_energy,
    "convergence": check_convergence,
    "decay": check_decay,
    "operators": check_operators,
    "slice_shift": check_slice_shift,
    "conley": check_conley,
    "uniqueness": check_uniqueness,
    "transversality": check_transversality,
}
