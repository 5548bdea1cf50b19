"""Problem data and closed-form objects of the local fold model.

A local model is a triple (A, b, h): A a symmetric invertible matrix acting
on the fast block, b a column vector of norm < 1 coupling fast and slow
directions, and h a smooth symmetric metric perturbation vanishing at the
origin.  The flow under study is

    eps * dx/dt = -A x + b (1 - z^2) + eps * Rx_eps(x, z),
    dz/dt       = -<A x, b> + (1 - z^2) + Rz_eps(x, z),

the negative gradient flow of f_eps(x, z) = (eps/2) x^T A x + z^3/3 - z in
the metric whose inverse is [[I/eps^2, b/eps], [b^T/eps, 1]] plus the
scaled h term.  Only the birth side (two rest points at (0, +-1)) is
implemented.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .norms import Grid, GridPath


# ---------------------------------------------------------------------------
# metric perturbation families
# ---------------------------------------------------------------------------
# h is a callable (eps, x, z) -> symmetric (n, n) matrix, smooth with
# h(0, 0, 0) = 0.  Three stateless families ship with the package so tests
# are reproducible; any user callable with the same contract is accepted.


@dataclass(frozen=True)
class ZeroPerturbation:
    """h identically zero (constant-metric case)."""

    n: int

    is_zero = True

    def __call__(self, eps: float, x: np.ndarray, z: float) -> np.ndarray:
        return np.zeros((self.n, self.n))

    def batch(self, eps: float, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return np.zeros((len(Z), self.n, self.n))

    def batch_deriv(self, eps: float, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
        return np.zeros((len(Z), self.n, self.n, self.n))

    def config(self) -> dict:
        return {"kind": "zero"}


@dataclass(frozen=True)
class AffinePerturbation:
    """h(eps, x, z) = eps*S0 + sum_j x_j * X_j + z * Z.

    All blocks symmetric (n, n); coordinate-linear, so the derivative in
    (x, z) is constant and exact.
    """

    S0: np.ndarray
    X: tuple  # n-1 symmetric matrices
    Z: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "S0", _sym_matrix(self.S0))
        object.__setattr__(self, "X", tuple(_sym_matrix(m) for m in self.X))
        object.__setattr__(self, "Z", _sym_matrix(self.Z))

    is_zero = False

    @property
    def n(self) -> int:
        return self.S0.shape[0]

    def __call__(self, eps, x, z):
        out = eps * self.S0 + z * self.Z
        for xj, Xj in zip(np.atleast_1d(x), self.X):
            out = out + xj * Xj
        return out

    def batch(self, eps, X, Z):
        out = np.tile(eps * self.S0, (len(Z), 1, 1))
        out += Z[:, None, None] * self.Z
        for j, Xj in enumerate(self.X):
            out += X[:, j, None, None] * Xj
        return out

    def batch_deriv(self, eps, X, Z):
        # d h / d coord_c, independent of the evaluation point
        m = len(Z)
        out = np.empty((m, self.n, self.n, self.n))
        for j, Xj in enumerate(self.X):
            out[:, j] = Xj
        out[:, -1] = self.Z
        return out

    def config(self) -> dict:
        return {
            "kind": "affine",
            "S0": self.S0.tolist(),
            "X": [m.tolist() for m in self.X],
            "Z": self.Z.tolist(),
        }


@dataclass(frozen=True)
class SaturatedPerturbation:
    """h(eps, x, z) = eps * tanh(x^T C x + cz * z^2) * S.

    Bounded with bounded derivatives of all orders; S and C symmetric.
    """

    S: np.ndarray
    C: np.ndarray
    cz: float

    def __post_init__(self):
        object.__setattr__(self, "S", _sym_matrix(self.S))
        object.__setattr__(self, "C", _sym_matrix(self.C))

    is_zero = False

    @property
    def n(self) -> int:
        return self.S.shape[0]

    def _q(self, x, z):
        x = np.atleast_1d(x)
        return x @ self.C @ x + self.cz * z * z

    def __call__(self, eps, x, z):
        return eps * np.tanh(self._q(x, z)) * self.S

    def batch(self, eps, X, Z):
        q = np.einsum("mi,ij,mj->m", X, self.C, X) + self.cz * Z * Z
        return eps * np.tanh(q)[:, None, None] * self.S

    def batch_deriv(self, eps, X, Z):
        q = np.einsum("mi,ij,mj->m", X, self.C, X) + self.cz * Z * Z
        sech2 = 1.0 / np.cosh(q) ** 2
        dq = np.empty((len(Z), self.n))
        dq[:, :-1] = 2.0 * (X @ self.C)
        dq[:, -1] = 2.0 * self.cz * Z
        return eps * sech2[:, None, None, None] * dq[:, :, None, None] * self.S

    def config(self) -> dict:
        return {
            "kind": "saturated",
            "S": self.S.tolist(),
            "C": self.C.tolist(),
            "cz": self.cz,
        }


def _sym_matrix(m) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {m.shape}")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ValueError("matrix must be symmetric")
    return 0.5 * (m + m.T)


def perturbation_from_config(cfg: dict):
    kind = cfg["kind"]
    if kind == "zero":
        return ZeroPerturbation(int(cfg["n"])) if "n" in cfg else None
    if kind == "affine":
        return AffinePerturbation(np.array(cfg["S0"]), tuple(np.array(m) for m in cfg["X"]), np.array(cfg["Z"]))
    if kind == "saturated":
        return SaturatedPerturbation(np.array(cfg["S"]), np.array(cfg["C"]), float(cfg["cz"]))
    raise ValueError(f"unknown perturbation kind {kind!r}")


# ---------------------------------------------------------------------------
# core types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Point:
    """A state (x, z) with fast block x in R^(n-1) and slow coordinate z."""

    x: np.ndarray
    z: float

    def __post_init__(self):
        object.__setattr__(self, "x", np.atleast_1d(np.asarray(self.x, dtype=float)))
        object.__setattr__(self, "z", float(self.z))


@dataclass(frozen=True)
class WPoint:
    """A state in constraint-residual coordinates: w = A x + b (z^2 - 1)."""

    w: np.ndarray
    z: float

    def __post_init__(self):
        object.__setattr__(self, "w", np.atleast_1d(np.asarray(self.w, dtype=float)))
        object.__setattr__(self, "z", float(self.z))


@dataclass(frozen=True)
class ProblemTriple:
    """The data (A, b, h) of one local model, plus the provenance scale.

    c_scale is the positive factor produced by the normal-form construction;
    it cancels out of the rescaled dynamics entirely and is stored only so a
    triple remembers where it came from.
    """

    A: np.ndarray
    b: np.ndarray
    h: Callable = None
    c_scale: float = 1.0

    def __post_init__(self):
        A = _sym_matrix(self.A)
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)
        if b.shape != (A.shape[0],):
            raise ValueError(f"b must have shape ({A.shape[0]},), got {b.shape}")
        smin = np.linalg.svd(A, compute_uv=False).min()
        if smin <= 1e-12 * max(1.0, np.linalg.norm(A)):
            raise ValueError("A must be invertible")
        if np.linalg.norm(b) >= 1.0:
            raise ValueError(f"|b| must be < 1, got {np.linalg.norm(b)}")
        if self.c_scale <= 0:
            raise ValueError("c_scale must be positive")
        if self.h is None:
            object.__setattr__(self, "h", ZeroPerturbation(self.n))
        h0 = self.h(0.0, np.zeros(self.n - 1), 0.0)
        if not np.allclose(h0, 0.0, atol=1e-12):
            raise ValueError("h must vanish at (eps, x, z) = (0, 0, 0)")
        A.setflags(write=False)
        b.setflags(write=False)

    @property
    def n(self) -> int:
        return self.A.shape[0] + 1

    @property
    def bnorm2(self) -> float:
        return float(self.b @ self.b)

    @property
    def rate(self) -> float:
        """The slow relaxation rate 1 - |b|^2 of the reduced z-equation."""
        return 1.0 - self.bnorm2

    def A_inv(self) -> np.ndarray:
        return np.linalg.inv(self.A)


def build_triple(P, q, c: float, D) -> ProblemTriple:
    """Normal-form constructor: from metric data (P, q, c) and sign matrix D.

    Produces A = (1/c) P^(1/2) D P^(1/2) and b = sqrt(c) P^(-1/2) q.  P must
    be symmetric positive definite and c |P^(-1/2) q|^2 < 1, which is exactly
    positive definiteness of the resulting metric block.  A inherits the
    inertia of D by congruence.
    """
    P = _sym_matrix(P)
    q = np.atleast_1d(np.asarray(q, dtype=float))
    D = np.asarray(D, dtype=float)
    if c <= 0:
        raise ValueError("c must be positive")
    evals, evecs = np.linalg.eigh(P)
    if evals.min() <= 0:
        raise ValueError("P must be positive definite")
    if not np.allclose(D, np.diag(np.diag(D))) or not np.allclose(np.abs(np.diag(D)), 1.0):
        raise ValueError("D must be diagonal with entries +-1")
    P_half = (evecs * np.sqrt(evals)) @ evecs.T
    P_inv_half = (evecs / np.sqrt(evals)) @ evecs.T
    b = np.sqrt(c) * P_inv_half @ q
    if b @ b >= 1.0:
        raise ValueError(
            f"inadmissible metric data: c |P^(-1/2) q|^2 = {b @ b:.6g} >= 1"
        )
    A = (P_half @ D @ P_half) / c
    return ProblemTriple(A=A, b=b, c_scale=c)


# ---------------------------------------------------------------------------
# dynamics
# ---------------------------------------------------------------------------

def remainder(triple: ProblemTriple, eps: float, p: Point) -> tuple[np.ndarray, float]:
    """(Rx, Rz) defined by (eps*Rx, Rz)^T = -h(eps, eps^2 x, eps z) (Ax, z^2-1)^T."""
    H = triple.h(eps, eps**2 * p.x, eps * p.z)
    u = np.append(triple.A @ p.x, p.z**2 - 1.0)
    v = -H @ u
    return v[:-1] / eps, float(v[-1])


def remainder_many(triple: ProblemTriple, eps: float, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    """Vectorised remainder along a path; returns (m, n) with rows (Rx, Rz)."""
    m = len(Z)
    if triple.h.is_zero:
        return np.zeros((m, triple.n))
    H = triple.h.batch(eps, eps**2 * X, eps * Z)
    u = np.concatenate([X @ triple.A.T, (Z**2 - 1.0)[:, None]], axis=1)
    v = -np.einsum("mab,mb->ma", H, u)
    v[:, :-1] /= eps
    return v


def rhs(triple: ProblemTriple, eps: float, p: Point) -> tuple[np.ndarray, float]:
    """Velocity field of the flow: exact negative gradient of (f_eps, g_eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    Ax = triple.A @ p.x
    base_x = (-Ax + triple.b * (1.0 - p.z**2)) / eps
    base_z = -float(Ax @ triple.b) + (1.0 - p.z**2)
    if triple.h.is_zero:
        return base_x, base_z
    Rx, Rz = remainder(triple, eps, p)
    return base_x + Rx, base_z + Rz


def potential(triple: ProblemTriple, eps: float, p: Point) -> float:
    """f_eps(x, z) = (eps/2) x^T A x + z^3/3 - z.  Values at the rest points
    (0, +-1) are -+2/3."""
    return float(0.5 * eps * p.x @ triple.A @ p.x + p.z**3 / 3.0 - p.z)


def metric_inverse(triple: ProblemTriple, eps: float, p: Point) -> np.ndarray:
    """Inverse metric at p: [[I/eps^2, b/eps], [b^T/eps, 1]] + scaled h term.

    Raises if the result is not positive definite, which signals an h too
    large for this eps.
    """
    nm1 = triple.n - 1
    gi = np.empty((triple.n, triple.n))
    gi[:nm1, :nm1] = np.eye(nm1) / eps**2
    gi[:nm1, -1] = triple.b / eps
    gi[-1, :nm1] = triple.b / eps
    gi[-1, -1] = 1.0
    if not triple.h.is_zero:
        H = triple.h(eps, eps**2 * p.x, eps * p.z)
        scale = np.append(np.full(nm1, 1.0 / eps), 1.0)
        gi = gi + (scale[:, None] * H) * scale[None, :]
    if np.linalg.eigvalsh(gi).min() <= 0:
        raise ValueError("inverse metric not positive definite (h too large for this eps)")
    return gi


def metric(triple: ProblemTriple, eps: float, p: Point) -> np.ndarray:
    return np.linalg.inv(metric_inverse(triple, eps, p))


# ---------------------------------------------------------------------------
# limit solution and coordinate changes
# ---------------------------------------------------------------------------

def limit_solution(triple: ProblemTriple, t) -> np.ndarray:
    """The explicit connecting orbit of the reduced (eps = 0) system:

        gamma0(t) = (A^(-1) b / cosh^2(r t),  tanh(r t)),   r = 1 - |b|^2.

    Vectorised: scalar t gives shape (n,), array t gives (m, n).
    """
    t = np.asarray(t, dtype=float)
    r = triple.rate
    xamp = triple.A_inv() @ triple.b
    sech2 = 1.0 / np.cosh(r * t) ** 2
    out = np.empty(t.shape + (triple.n,))
    out[..., :-1] = sech2[..., None] * xamp
    out[..., -1] = np.tanh(r * t)
    return out


def limit_solution_dt(triple: ProblemTriple, t) -> np.ndarray:
    """Analytic time derivative of the limit solution."""
    t = np.asarray(t, dtype=float)
    r = triple.rate
    xamp = triple.A_inv() @ triple.b
    s = r * t
    dsech2 = -2.0 * np.tanh(s) / np.cosh(s) ** 2
    out = np.empty(t.shape + (triple.n,))
    out[..., :-1] = (r * dsech2)[..., None] * xamp
    out[..., -1] = r / np.cosh(s) ** 2
    return out


def limit_solution_dtt(triple: ProblemTriple, t) -> np.ndarray:
    """Analytic second derivative of the limit solution."""
    t = np.asarray(t, dtype=float)
    r = triple.rate
    xamp = triple.A_inv() @ triple.b
    s = r * t
    th, sech2 = np.tanh(s), 1.0 / np.cosh(s) ** 2
    d2sech2 = 4.0 * sech2 * th**2 - 2.0 * sech2**2
    out = np.empty(t.shape + (triple.n,))
    out[..., :-1] = (r**2 * d2sech2)[..., None] * xamp
    out[..., -1] = -2.0 * r**2 * sech2 * th
    return out


def to_w(triple: ProblemTriple, p: Point) -> WPoint:
    """Constraint-residual coordinates: w = A x + b (z^2 - 1).

    The limit solution has w identically zero.
    """
    return WPoint(triple.A @ p.x + triple.b * (p.z**2 - 1.0), p.z)


def from_w(triple: ProblemTriple, wp: WPoint) -> Point:
    """Inverse change of coordinates: x = A^(-1) w + A^(-1) b (1 - z^2)."""
    return Point(triple.A_inv() @ (wp.w + triple.b * (1.0 - wp.z**2)), wp.z)


def A_eps(triple: ProblemTriple, eps: float, z: float) -> np.ndarray:
    """The z-dependent fast-block matrix A + 2 eps z b b^T."""
    return triple.A + 2.0 * eps * z * np.outer(triple.b, triple.b)


def zoom(path: GridPath, eps: float) -> GridPath:
    """Rescale a path from original-parameter coordinates to the fast-slow
    frame: x -> x/eps^2, z -> z/eps, t -> t/eps.  The rest points
    (0, +-eps) map to (0, +-1)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = Grid(path.grid.T / eps, path.grid.m)
    vals = path.values.copy()
    vals[:, :-1] /= eps**2
    vals[:, -1] /= eps
    return GridPath(g, vals)


def unzoom(path: GridPath, eps: float) -> GridPath:
    """Inverse of zoom."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    g = Grid(path.grid.T * eps, path.grid.m)
    vals = path.values.copy()
    vals[:, :-1] *= eps**2
    vals[:, -1] *= eps
    return GridPath(g, vals)


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------

def triple_to_json(triple: ProblemTriple) -> str:
    doc = {
        "A": triple.A.tolist(),
        "b": triple.b.tolist(),
        "c_scale": triple.c_scale,
        "h": triple.h.config(),
    }
    return json.dumps(doc, indent=2)


def triple_from_json(text: str) -> ProblemTriple:
    doc = json.loads(text)
    A = np.array(doc["A"], dtype=float)
    b = np.array(doc["b"], dtype=float)
    hcfg = doc.get("h", {"kind": "zero"})
    if hcfg["kind"] == "zero":
        h = ZeroPerturbation(A.shape[0] + 1)
    else:
        h = perturbation_from_config(hcfg)
    return ProblemTriple(A=A, b=b, h=h, c_scale=float(doc.get("c_scale", 1.0)))


def load_triple(path) -> ProblemTriple:
    with open(path, "r", encoding="utf-8") as fh:
        return triple_from_json(fh.read())


def save_triple(triple: ProblemTriple, path):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(triple_to_json(triple))
