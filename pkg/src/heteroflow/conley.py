"""Index-pair geometry: spectral projectors, the sets N and L, boundary
flow directions, the energy-length constant, and the chart-exit criterion.

The isolating pair is built in constraint-residual coordinates
w = A x + b (z^2 - 1) around the limit orbit (which has w = 0):

    N = { |z| <= K, |pi+ w| <= eps^nu, |pi- w| <= eps^((2 nu - 3)/4) },
    L = { same, with eps^nu <= |pi- w| },

where pi+/pi- project onto the positive/negative eigenspaces of
A_eps(z) = A + 2 eps z b b^T.

Exponent note: the set definition in the source material prints the outer
pi- radius with the positive exponent (3 - 2 nu)/2, while the boundary-case
analysis and the exit-value estimate use eps^((2 nu - 3)/4) (a large
radius).  Only the latter is consistent with the case analysis, the
sqrt(2)/eps containment bound, and the exit criterion f < -2/3, so the
proof-consistent radius is implemented; reports flag the discrepancy.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import model
from .model import Point, ProblemTriple, WPoint
from .norms import GridPath
from .solver import _wz_field

EXPONENT_NOTE = (
    "outer pi- radius uses the proof-consistent exponent (2*nu-3)/4; the "
    "printed set definition's (3-2*nu)/2 is inconsistent with the boundary "
    "case analysis and is not used"
)


def K_constant(b) -> float:
    """The energy-length constant K = sqrt((2-|b|^2)/(1-|b|^2)) + (4/3) sqrt(32).

    Any trajectory from (0,-1) whose |z| exceeds K while the w-bound holds
    must spend more than the available energy 4/3.
    """
    b = np.atleast_1d(np.asarray(b, dtype=float))
    bn2 = float(b @ b)
    if bn2 >= 1.0:
        raise ValueError(f"|b| must be < 1, got |b|^2 = {bn2}")
    return float(np.sqrt((2.0 - bn2) / (1.0 - bn2)) + (4.0 / 3.0) * np.sqrt(32.0))


class FaceLabel(enum.Enum):
    interior_NL = "interior_NL"
    face_a = "face_a"            # |pi- w| at the inner radius eps^nu
    face_b = "face_b"            # |pi- w| at the outer radius eps^((2nu-3)/4)
    face_c = "face_c"            # |pi+ w| at the radius eps^nu
    face_d = "face_d"            # z = +-K
    in_L = "in_L"
    outside_N = "outside_N"


@dataclass(frozen=True)
class ConleyConfig:
    triple: ProblemTriple
    eps: float
    nu: float = 0.25
    K: float = field(default=None)

    def __post_init__(self):
        if not 0.0 < self.nu < 0.5:
            raise ValueError(f"nu must lie in (0, 1/2), got {self.nu}")
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"eps must lie in (0, 1), got {self.eps}")
        if self.K is None:
            object.__setattr__(self, "K", K_constant(self.triple.b))

    @property
    def r_plus(self) -> float:
        return self.eps**self.nu

    @property
    def r_minus_inner(self) -> float:
        return self.eps**self.nu

    @property
    def r_minus_outer(self) -> float:
        return self.eps ** ((2.0 * self.nu - 3.0) / 4.0)


# ---------------------------------------------------------------------------
# spectral projectors
# ---------------------------------------------------------------------------

def spectral_projectors(triple: ProblemTriple, eps: float, z: float):
    """Orthogonal projections onto the positive / negative eigenspaces of
    A_eps(z), by symmetric eigendecomposition.

    Requires every eigenvalue of A_eps(z) to stay outside [-kappa/2, kappa/2]
    with kappa the smallest |eigenvalue| of A itself.
    """
    kappa = np.abs(np.linalg.eigvalsh(triple.A)).min()
    lam, V = np.linalg.eigh(model.A_eps(triple, eps, z))
    if np.abs(lam).min() <= 0.5 * kappa:
        raise ValueError(
            f"A_eps(z) has an eigenvalue {lam[np.abs(lam).argmin()]:.3e} inside "
            f"[-kappa/2, kappa/2]; eps*z too large")
    pos = lam > 0
    Vp, Vm = V[:, pos], V[:, ~pos]
    return Vp @ Vp.T, Vm @ Vm.T


def projector_z_derivative(triple: ProblemTriple, eps: float, z: float, zdot: float):
    """Exact derivative of the spectral projectors along z-motion zdot.

    First-order spectral perturbation of A_eps(z) under
    dA/dt = 2 eps zdot b b^T; couples only the cross terms between the two
    eigenvalue clusters.
    """
    lam, V = np.linalg.eigh(model.A_eps(triple, eps, z))
    Adot = 2.0 * eps * zdot * np.outer(triple.b, triple.b)
    M = V.T @ Adot @ V
    pos = lam > 0
    S = np.zeros_like(M)
    for i in np.flatnonzero(pos):
        for j in np.flatnonzero(~pos):
            sij = M[i, j] / (lam[i] - lam[j])
            S[i, j] = sij
            S[j, i] = sij
    dPp = V @ S @ V.T
    return dPp, -dPp


# ---------------------------------------------------------------------------
# set membership
# ---------------------------------------------------------------------------

def _radii_state(cfg: ConleyConfig, p: Point):
    wp = model.to_w(cfg.triple, p)
    pp, pm = spectral_projectors(cfg.triple, cfg.eps, p.z)
    return wp, float(np.linalg.norm(pp @ wp.w)), float(np.linalg.norm(pm @ wp.w))


def classify_point(cfg: ConleyConfig, p: Point) -> FaceLabel:
    """Exhaustive classification against the radii of N and L.

    Precedence (deterministic, ties resolve to the more restrictive label):
    outside_N, then face_d, then faces a, b, c at radius equality within
    tolerance 1e-9, then in_L, else interior_NL.
    """
    _, np_, nm = _radii_state(cfg, p)
    zt = 1e-9 * max(1.0, cfg.K)
    ta = 1e-9 * max(1.0, cfg.r_minus_inner)
    tb = 1e-9 * max(1.0, cfg.r_minus_outer)
    tc = 1e-9 * max(1.0, cfg.r_plus)
    az = abs(p.z)
    if az > cfg.K + zt or np_ > cfg.r_plus + tc or nm > cfg.r_minus_outer + tb:
        return FaceLabel.outside_N
    if abs(az - cfg.K) <= zt:
        return FaceLabel.face_d
    if abs(nm - cfg.r_minus_inner) <= ta:
        return FaceLabel.face_a
    if abs(nm - cfg.r_minus_outer) <= tb:
        return FaceLabel.face_b
    if abs(np_ - cfg.r_plus) <= tc:
        return FaceLabel.face_c
    if nm > cfg.r_minus_inner:
        return FaceLabel.in_L
    return FaceLabel.interior_NL


# ---------------------------------------------------------------------------
# boundary flow directions
# ---------------------------------------------------------------------------

@dataclass
class FlowSignReport:
    face: FaceLabel
    rho1_dot: float
    rho2_dot: float
    verdict: bool


def boundary_flow_sign(cfg: ConleyConfig, p: Point) -> FlowSignReport:
    """Exact time derivatives of rho1 = |pi- w|^2 and rho2 = |pi+ w|^2 along
    the flow at a face point.

    The isolating-pair claim is rho1' > 0 on faces a and b (the flow crosses
    into L / out of N there) and rho2' < 0 on face c (the flow enters).
    """
    face = classify_point(cfg, p)
    if face not in (FaceLabel.face_a, FaceLabel.face_b, FaceLabel.face_c):
        raise ValueError(f"point is not on a checkable face (classified {face.value})")
    tr, eps = cfg.triple, cfg.eps
    wp = model.to_w(tr, p)
    pp, pm = spectral_projectors(tr, eps, p.z)
    wdot, zdot = _wz_field(tr, eps, wp.w, wp.z)
    dPp, dPm = projector_z_derivative(tr, eps, p.z, zdot)
    wm, wpl = pm @ wp.w, pp @ wp.w
    rho1_dot = 2.0 * float(wm @ (dPm @ wp.w)) + 2.0 * float(wm @ (pm @ wdot))
    rho2_dot = 2.0 * float(wpl @ (dPp @ wp.w)) + 2.0 * float(wpl @ (pp @ wdot))
    if face is FaceLabel.face_c:
        verdict = rho2_dot < 0.0
    else:
        verdict = rho1_dot > 0.0
    return FlowSignReport(face=face, rho1_dot=rho1_dot, rho2_dot=rho2_dot, verdict=verdict)


# ---------------------------------------------------------------------------
# face sampling
# ---------------------------------------------------------------------------

def _random_unit(rng, basis: np.ndarray) -> np.ndarray:
    """Random unit vector in the span of the given orthonormal columns."""
    k = basis.shape[1]
    if k == 0:
        raise ValueError("face is empty: the required eigenspace of A is trivial")
    c = rng.standard_normal(k)
    c /= np.linalg.norm(c)
    return basis @ c


def sample_face(cfg: ConleyConfig, face: FaceLabel, count: int, rng) -> list:
    """Draw points on a boundary face: z uniform on [-K, K], directions
    uniform on the eigenspace spheres, the free radius uniform below its cap."""
    tr, eps = cfg.triple, cfg.eps
    pts = []
    for _ in range(count):
        z = rng.uniform(-cfg.K, cfg.K)
        lam, V = np.linalg.eigh(model.A_eps(tr, eps, z))
        Vp, Vm = V[:, lam > 0], V[:, lam < 0]
        s = rng.uniform(0.0, 0.999)
        if face is FaceLabel.face_a:
            w = cfg.r_minus_inner * _random_unit(rng, Vm)
            if Vp.shape[1]:
                w = w + s * cfg.r_plus * _random_unit(rng, Vp)
        elif face is FaceLabel.face_b:
            w = cfg.r_minus_outer * _random_unit(rng, Vm)
            if Vp.shape[1]:
                w = w + s * cfg.r_plus * _random_unit(rng, Vp)
        elif face is FaceLabel.face_c:
            w = cfg.r_plus * _random_unit(rng, Vp)
            if Vm.shape[1]:
                w = w + s * cfg.r_minus_outer * _random_unit(rng, Vm)
        else:
            raise ValueError(f"cannot sample face {face}")
        pts.append(model.from_w(tr, WPoint(w, z)))
    return pts


@dataclass
class FaceSweepResult:
    rows: list                     # (face, eps, sample_id, rho1_dot, rho2_dot, verdict)
    pass_rate: dict                # face name -> fraction of verdicts true
    note: str = EXPONENT_NOTE

    @property
    def all_pass(self) -> bool:
        return all(r == 1.0 for r in self.pass_rate.values())


def face_sweep(cfg: ConleyConfig, count: int, rng) -> FaceSweepResult:
    """Evaluate boundary_flow_sign on `count` sampled points per face."""
    rows = []
    rates = {}
    for face in (FaceLabel.face_a, FaceLabel.face_b, FaceLabel.face_c):
        npass = 0
        for k, p in enumerate(sample_face(cfg, face, count, rng)):
            rep = boundary_flow_sign(cfg, p)
            npass += int(rep.verdict)
            rows.append((face.value, cfg.eps, k, rep.rho1_dot, rep.rho2_dot, rep.verdict))
        rates[face.value] = npass / count
    return FaceSweepResult(rows=rows, pass_rate=rates)


# ---------------------------------------------------------------------------
# path-level checks
# ---------------------------------------------------------------------------

@dataclass
class ExitReport:
    exited: bool
    exit_index: int | None
    f_at_exit: float | None
    passed: bool | None            # f < -2/3 at the first exit sample


def exit_value_check(cfg: ConleyConfig, path: GridPath) -> ExitReport:
    """Scan a path for its first sample strictly outside N and evaluate the
    potential there; the exit criterion is f < -2/3."""
    first = Point(path.values[0, :-1], path.values[0, -1])
    if classify_point(cfg, first) is FaceLabel.outside_N:
        raise ValueError("path does not start inside N")
    for i in range(path.grid.m):
        p = Point(path.values[i, :-1], path.values[i, -1])
        if classify_point(cfg, p) is FaceLabel.outside_N:
            f = model.potential(cfg.triple, cfg.eps, p)
            return ExitReport(True, i, f, f < -2.0 / 3.0)
    return ExitReport(False, None, None, None)


def path_w_norms(cfg: ConleyConfig, path: GridPath) -> np.ndarray:
    """|A x_i + b (z_i^2 - 1)| along a path."""
    W = path.xi @ cfg.triple.A.T + np.outer(path.zeta**2 - 1.0, cfg.triple.b)
    return np.sqrt(np.sum(W * W, axis=1))


def apriori_check(cfg: ConleyConfig, path: GridPath) -> bool:
    """Sup-norm a priori bound on solutions: |w| <= eps^nu and |z| <= K."""
    return bool(path_w_norms(cfg, path).max() <= cfg.eps**cfg.nu
                and np.abs(path.zeta).max() <= cfg.K)


@dataclass
class EnergyLengthReport:
    energy: float
    triggered: bool                # did |z| exceed K by the end of the window
    passed: bool                   # energy > 4/3 whenever triggered


def energy_length_probe(cfg: ConleyConfig, path: GridPath, T_exit: float) -> EnergyLengthReport:
    """Length-energy dichotomy: a path keeping |w| <= sqrt(2)/eps up to
    T_exit but pushing |z| past K must carry energy > 4/3."""
    from .verify import energy

    t = path.grid.times()
    mask = t <= T_exit
    if path_w_norms(cfg, path)[mask].max() > np.sqrt(2.0) / cfg.eps:
        raise ValueError("w-bound violated before T_exit; probe hypotheses fail")
    E = energy(cfg.triple, cfg.eps, path, interval=(t[0], T_exit))
    triggered = bool(np.abs(path.zeta[mask]).max() > cfg.K)
    passed = (not triggered) or (E > 4.0 / 3.0)
    return EnergyLengthReport(energy=E, triggered=triggered, passed=passed)
