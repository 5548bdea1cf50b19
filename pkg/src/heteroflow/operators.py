"""Discrete linearization machinery at the limit solution.

The first-order operator D eta = eta' + Q eta and its analytic adjoint
D* eta = -eta' + Q eta (adjoint with respect to the weighted L2 inner
product) are assembled as sparse matrices over a uniform grid with
homogeneous Dirichlet rows at both ends.  Q is the block matrix

    Q = [[ A/eps          2 z0(t) b/eps ],
         [ b^T A          2 z0(t)       ]]

with z0 the slow component of the base path.  D* is assembled from its own
stencil, never as a numeric transpose, so discrete adjointness is a
measurable property rather than a definition.

The nonlinear residual F(eta) vanishes exactly when gamma0 + eta solves the
flow equations on the grid; its linearization at 0 is D + E with E the
multiplication operator stemming from the metric perturbation h.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import cholesky, svdvals

from . import model
from .model import ProblemTriple
from .norms import Grid, GridPath, WeightContext, g0_matrix, l2_norm


class SliceDivergenceError(RuntimeError):
    """The geometric-series slice iteration failed to contract."""


@dataclass
class SliceSolveReport:
    iterations: int
    residual_history: list
    converged: bool


@dataclass
class LinearizedSystem:
    """Assembled discrete operators at a base path (default: limit solution).

    All members are fixed after assembly; factorizations are cached and
    shared read-only, so concurrent solves on one system are safe.
    """

    ctx: WeightContext
    grid: Grid
    triple: ProblemTriple
    base_path: GridPath
    base_is_limit: bool
    Q: np.ndarray            # (m, n, n) per-node blocks
    D: sp.csr_matrix
    Dstar: sp.csr_matrix
    E_blocks: np.ndarray | None   # (m, n, n) or None when h == 0
    _ddstar_lu: object = field(default=None, repr=False)
    _w_eps: np.ndarray = field(default=None, repr=False)
    _gram_l2: sp.csr_matrix = field(default=None, repr=False)
    _gram_w12: sp.csr_matrix = field(default=None, repr=False)

    @property
    def eps(self) -> float:
        return self.ctx.eps

    @property
    def n(self) -> int:
        return self.triple.n

    @property
    def size(self) -> int:
        return self.grid.m * self.n

    # -- weighted linear algebra on flat vectors --------------------------

    def gram_l2(self) -> sp.csr_matrix:
        if self._gram_l2 is None:
            w = self.grid.trapezoid_weights()
            self._gram_l2 = sp.kron(sp.diags(w), g0_matrix(self.ctx), format="csr")
        return self._gram_l2

    def gram_w12(self) -> sp.csr_matrix:
        if self._gram_w12 is None:
            G = self.gram_l2()
            Dc = derivative_matrix(self.grid, self.n)
            self._gram_w12 = (G + Dc.T @ G @ Dc).tocsr()
        return self._gram_w12

    def l2_norm_flat(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.gram_l2() @ v), 0.0)))

    def l2_inner_flat(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ (self.gram_l2() @ v))

    def w12_norm_flat(self, v: np.ndarray) -> float:
        return float(np.sqrt(max(v @ (self.gram_w12() @ v), 0.0)))

    def ddstar_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve D D* y = rhs by a cached sparse LU with iterative refinement."""
        if self._ddstar_lu is None:
            K = (self.D @ self.Dstar).tocsc()
            try:
                self._ddstar_lu = spla.splu(K)
            except RuntimeError as exc:
                raise RuntimeError(
                    "factorization of D D* failed; the discretization is "
                    "ill-conditioned (grid too coarse or eps too small for dt)"
                ) from exc
            self._ddstar_mat = K
        y = self._ddstar_lu.solve(rhs)
        for _ in range(2):
            r = rhs - self._ddstar_mat @ y
            y = y + self._ddstar_lu.solve(r)
        return y

    def path(self, flat: np.ndarray) -> GridPath:
        return GridPath(self.grid, flat.reshape(self.grid.m, self.n))

    def flat(self, path: GridPath) -> np.ndarray:
        if path.grid != self.grid:
            raise ValueError("path grid does not match system grid")
        return path.values.reshape(-1)


def derivative_matrix(grid: Grid, n: int) -> sp.csr_matrix:
    """Sparse discrete d/dt on flat (m*n,) vectors: central differences in
    the interior, second-order one-sided rows at the boundary nodes."""
    m, dt = grid.m, grid.dt
    c = 1.0 / (2.0 * dt)
    rows, cols, data = [], [], []
    idx = np.arange(1, m - 1)
    for a in range(n):
        rows += [idx * n + a, idx * n + a]
        cols += [(idx - 1) * n + a, (idx + 1) * n + a]
        data += [np.full(m - 2, -c), np.full(m - 2, c)]
        rows += [[a] * 3, [(m - 1) * n + a] * 3]
        cols += [[a, n + a, 2 * n + a],
                 [(m - 1) * n + a, (m - 2) * n + a, (m - 3) * n + a]]
        data += [[-3 * c, 4 * c, -c], [3 * c, -4 * c, c]]
    rows = np.concatenate([np.asarray(r).ravel() for r in rows])
    cols = np.concatenate([np.asarray(cc).ravel() for cc in cols])
    data = np.concatenate([np.asarray(d).ravel() for d in data])
    return sp.coo_matrix((data, (rows, cols)), shape=(m * n, m * n)).tocsr()


def _stencil_matrix(Q: np.ndarray, grid: Grid, sign: float) -> sp.csr_matrix:
    """Assemble sign*eta' + Q eta with identity rows at both boundary nodes."""
    m, n = Q.shape[0], Q.shape[1]
    c = sign / (2.0 * grid.dt)
    idx = np.arange(1, m - 1)

    # Q blocks on the diagonal (interior nodes only)
    a_idx, b_idx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    rows_q = (idx[:, None, None] * n + a_idx[None]).ravel()
    cols_q = (idx[:, None, None] * n + b_idx[None]).ravel()
    data_q = Q[1:-1].ravel()

    # +-1/(2 dt) identity blocks at the neighbour nodes
    comp = np.arange(n)
    rows_d = np.concatenate([(idx[:, None] * n + comp).ravel()] * 2)
    cols_d = np.concatenate([((idx - 1)[:, None] * n + comp).ravel(),
                             ((idx + 1)[:, None] * n + comp).ravel()])
    data_d = np.concatenate([np.full((m - 2) * n, -c), np.full((m - 2) * n, c)])

    # Dirichlet rows
    bd = np.concatenate([comp, (m - 1) * n + comp])
    rows = np.concatenate([rows_q, rows_d, bd])
    cols = np.concatenate([cols_q, cols_d, bd])
    data = np.concatenate([data_q, data_d, np.ones(2 * n)])
    return sp.coo_matrix((data, (rows, cols)), shape=(m * n, m * n)).tocsr()


def _q_blocks(triple: ProblemTriple, eps: float, z0: np.ndarray) -> np.ndarray:
    m, n = len(z0), triple.n
    Q = np.zeros((m, n, n))
    Q[:, :-1, :-1] = triple.A / eps
    Q[:, :-1, -1] = (2.0 / eps) * np.outer(z0, triple.b)
    Q[:, -1, :-1] = triple.b @ triple.A
    Q[:, -1, -1] = 2.0 * z0
    return Q


def linearized_remainder_blocks(triple: ProblemTriple, eps: float,
                                values: np.ndarray) -> np.ndarray:
    """Per-node blocks of -dR(gamma) as a multiplication operator.

    With M = diag(eps,...,eps,1) and u(p) = (A x, z^2 - 1),

        -M dR(p) etah = (dh)[eps M etah] u(p) + h (A xih, 2 z zetah),

    both terms evaluated at the h-argument (eps^2 x, eps z).
    """
    m, n = values.shape
    X, Z = values[:, :-1], values[:, -1]
    H = triple.h.batch(eps, eps**2 * X, eps * Z)
    dH = triple.h.batch_deriv(eps, eps**2 * X, eps * Z)   # (m, n, n, n)
    u = np.concatenate([X @ triple.A.T, (Z**2 - 1.0)[:, None]], axis=1)

    meps = np.append(np.full(n - 1, eps), 1.0)
    # column c of the first term: eps * meps_c * (dh_c @ u)
    T = np.einsum("mcab,mb->mac", dH, u) * (eps * meps)[None, None, :]
    # second term: h @ blockdiag(A, 2 z)
    B2 = np.zeros((m, n, n))
    B2[:, :-1, :-1] = triple.A
    B2[:, -1, -1] = 2.0 * Z
    T += np.einsum("mab,mbc->mac", H, B2)
    return T / meps[None, :, None]


def assemble(ctx: WeightContext, grid: Grid, triple: ProblemTriple,
             base_path: GridPath | None = None) -> LinearizedSystem:
    """Build the discrete D, D* and E at a base path.

    The default base is the limit solution sampled on the grid; with h == 0
    the full linearization of the residual at eta = 0 is then exactly D.
    """
    if grid.m < 3:
        raise ValueError("grid too coarse: need m >= 3")
    if abs(ctx.eps) <= 0 or ctx.b.shape != triple.b.shape or not np.allclose(ctx.b, triple.b):
        raise ValueError("weight context does not match the triple")
    base_is_limit = base_path is None
    if base_path is None:
        base_path = GridPath(grid, model.limit_solution(triple, grid.times()))
    elif base_path.grid != grid:
        raise ValueError("base path lives on a different grid")

    Q = _q_blocks(triple, ctx.eps, base_path.zeta)
    D = _stencil_matrix(Q, grid, sign=+1.0)
    Dstar = _stencil_matrix(Q, grid, sign=-1.0)
    E_blocks = None
    if not triple.h.is_zero:
        E_blocks = linearized_remainder_blocks(triple, ctx.eps, base_path.values)
        E_blocks[0] = 0.0
        E_blocks[-1] = 0.0
    return LinearizedSystem(ctx=ctx, grid=grid, triple=triple,
                            base_path=base_path, base_is_limit=base_is_limit,
                            Q=Q, D=D, Dstar=Dstar, E_blocks=E_blocks)


# ---------------------------------------------------------------------------
# nonlinear residual and its linearization
# ---------------------------------------------------------------------------

def apply_E(sys: LinearizedSystem, eta: GridPath) -> GridPath:
    """The error term of the linearization at the base path: E eta = -dR(base) eta.

    The zero map when h == 0; linear in eta.
    """
    if eta.grid != sys.grid:
        raise ValueError("eta lives on a different grid")
    if sys.E_blocks is None:
        return GridPath.zeros(sys.grid, sys.n)
    out = np.einsum("mab,mb->ma", sys.E_blocks, eta.values)
    return GridPath(sys.grid, out)


def _extra_terms(sys: LinearizedSystem, eta_vals: np.ndarray) -> np.ndarray:
    """The non-D part of the residual: vb*zeta^2 - R(base+eta) + (base'_x, 0),
    zeroed on the two Dirichlet rows."""
    tr, eps = sys.triple, sys.eps
    g = sys.grid
    gamma = sys.base_path.values + eta_vals
    vb = np.append(tr.b / eps, 1.0)
    out = np.outer(eta_vals[:, -1] ** 2, vb)
    out -= model.remainder_many(tr, eps, gamma[:, :-1], gamma[:, -1])
    if sys.base_is_limit:
        dbase = model.limit_solution_dt(tr, g.times())
    else:
        dbase = sys.base_path.derivative().values
    out[:, :-1] += dbase[:, :-1]
    out[0] = 0.0
    out[-1] = 0.0
    return out


def F_eps(sys: LinearizedSystem, eta: GridPath) -> GridPath:
    """Zero-finding residual: F(eta) = 0 on the grid exactly when
    base + eta solves the flow equations discretely (Dirichlet rows hold
    the boundary values of eta)."""
    if eta.grid != sys.grid:
        raise ValueError("eta lives on a different grid")
    flat = sys.D @ eta.values.reshape(-1)
    out = flat.reshape(sys.grid.m, sys.n) + _extra_terms(sys, eta.values)
    return GridPath(sys.grid, out)


def dF_eps(sys: LinearizedSystem, eta: GridPath | None = None) -> sp.csr_matrix:
    """Linearization of the residual at eta, as a sparse matrix.

    At eta = 0 with h == 0 this is exactly D.  In general it adds the
    rank-one zeta-quadratic blocks 2*zeta*vb and the remainder linearization
    at base + eta.
    """
    J = sys.D
    m, n = sys.grid.m, sys.n
    add = np.zeros((m, n, n))
    if eta is not None and np.any(eta.values):
        vb = np.append(sys.triple.b / sys.eps, 1.0)
        add[:, :, -1] += 2.0 * eta.values[:, -1, None] * vb[None, :]
        gamma = sys.base_path.values + eta.values
    else:
        gamma = None
    if not sys.triple.h.is_zero:
        if gamma is None:
            add += sys.E_blocks
        else:
            add += linearized_remainder_blocks(sys.triple, sys.eps, gamma)
    elif gamma is None:
        return J
    add[0] = 0.0
    add[-1] = 0.0
    a_idx, b_idx = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    node = np.arange(m)
    rows = (node[:, None, None] * n + a_idx[None]).ravel()
    cols = (node[:, None, None] * n + b_idx[None]).ravel()
    return (J + sp.coo_matrix((add.ravel(), (rows, cols)),
                              shape=(m * n, m * n)).tocsr()).tocsr()


# ---------------------------------------------------------------------------
# solves
# ---------------------------------------------------------------------------

def solve_normal(sys: LinearizedSystem, rhs: GridPath) -> GridPath:
    """Solve the normal equations D D* y = rhs.

    Residual is driven below 1e-10 relative by iterative refinement on the
    cached LU factors.
    """
    b = sys.flat(rhs)
    y = sys.ddstar_solve(b)
    scale = sys.l2_norm_flat(b)
    if scale > 0:
        res = sys.l2_norm_flat(b - sys._ddstar_mat @ y)
        if res > 1e-10 * scale:
            raise RuntimeError(
                f"normal-equation solve stalled at relative residual {res/scale:.3e}"
            )
    return sys.path(y)


def slice_solve(sys: LinearizedSystem, A_op, rhs: GridPath,
                tol: float = 1e-12, tol_abs: float = 0.0, max_outer: int = 200):
    """Solve A x = rhs with x constrained to the range of D*.

    Geometric-series iteration: repeatedly solve D D* y_k = (rhs - sum of
    corrections), push x_k = D* y_k through A, and accumulate.  Contracts
    when A is an eps-small perturbation of D on the slice; a defect that
    stops shrinking while still significant raises SliceDivergenceError.

    Returns (eta, report) with eta = D* (sum y_k), certified in range(D*).
    """
    if callable(A_op):
        apply_A = A_op
    else:
        apply_A = lambda v: A_op @ v
    mu = sys.flat(rhs)
    scale = max(sys.l2_norm_flat(mu), 1e-300)
    goal = max(tol * scale, tol_abs)
    acc = np.zeros_like(mu)
    x = np.zeros_like(mu)
    history = []
    converged = False
    for k in range(max_outer):
        defect = mu - acc
        rn = sys.l2_norm_flat(defect)
        history.append(rn)
        if rn <= goal:
            converged = True
            break
        if k >= 1 and rn >= history[-2]:
            if rn <= 1e-9 * scale:        # round-off floor, defect negligible
                converged = True
                break
            raise SliceDivergenceError(
                f"slice iteration stopped contracting at step {k}: defect "
                f"{rn:.3e} >= {history[-2]:.3e} (eps too large for the perturbation)"
            )
        y = sys.ddstar_solve(defect)
        xk = sys.Dstar @ y
        x += xk
        acc += apply_A(xk)
    if not converged:
        raise SliceDivergenceError(f"slice iteration did not converge in {max_outer} steps")
    return sys.path(x), SliceSolveReport(iterations=len(history), residual_history=history,
                                         converged=converged)


def slice_linear_solve(sys: LinearizedSystem, J: sp.spmatrix, rhs: GridPath,
                       kernel_path: GridPath | None = None) -> GridPath:
    """Least-squares solve of J eta = rhs on the slice orthogonal to a
    kernel direction.

    A linearization along a trajectory is near-singular along the flow
    direction of that trajectory, and for the nonsymmetric J a one-sided
    border is not enough; the weighted normal equations with a symmetric
    border,

        [[J^T G J, c], [c^T, 0]] (eta, lambda) = (J^T G rhs, 0),

    with c the weighted covector of the supplied kernel direction (default:
    the measured kernel at the base path) are well-posed and return the
    minimiser with <kernel, eta>_{L2_eps} = 0.
    """
    if kernel_path is None:
        kernel_path = kernel_vector(sys)
    G = sys.gram_l2()
    c = G @ sys.flat(kernel_path)
    K = (J.T @ G @ J).tocsr()
    B = sp.bmat([[K, c[:, None]], [c[None, :], None]], format="csc")
    lu = spla.splu(B)
    b = np.append(J.T @ (G @ sys.flat(rhs)), 0.0)
    y = lu.solve(b)
    for _ in range(2):
        y = y + lu.solve(b - B @ y)
    return sys.path(y[:-1])


def kernel_vector(sys: LinearizedSystem) -> GridPath:
    """The measured kernel direction of D: w = w0 - P w0 with w0 the time
    derivative of the base path and P = D* (D D*)^(-1) D the orthogonal
    projection onto range(D*)."""
    if sys._w_eps is None:
        if sys.base_is_limit:
            w0 = model.limit_solution_dt(sys.triple, sys.grid.times()).reshape(-1)
        else:
            w0 = sys.base_path.derivative().values.reshape(-1)
        s = sys.D @ w0
        y = sys.ddstar_solve(s)
        w = w0 - sys.Dstar @ y
        if sys.w12_norm_flat(w) <= 1e-8 * sys.w12_norm_flat(w0):
            raise RuntimeError("degenerate kernel vector: discretization failure")
        sys._w_eps = w
    return sys.path(sys._w_eps.copy())


# ---------------------------------------------------------------------------
# spectral diagnostics
# ---------------------------------------------------------------------------

def _interior_index(sys: LinearizedSystem) -> np.ndarray:
    return np.arange(sys.n, sys.size - sys.n)


def weighted_singular_values(sys: LinearizedSystem, op: str = "D") -> np.ndarray:
    """All singular values of D or D* as a map W12_eps -> L2_eps, restricted
    to paths vanishing at the boundary.  Dense; meant for diagnostic grids
    (m*n up to a few thousand)."""
    M = {"D": sys.D, "Dstar": sys.Dstar}[op]
    I = _interior_index(sys)
    MI = M[I][:, I].toarray()
    GI = sys.gram_l2()[I][:, I].toarray()
    HI = sys.gram_w12()[I][:, I].toarray()
    Lg = cholesky(GI, lower=True)
    Rh = cholesky(HI, lower=False)
    # sigma = svd of Lg^T M Rh^(-1)
    S = np.linalg.solve(Rh.T, (Lg.T @ MI).T).T
    return svdvals(S)


def weighted_sigma_profile(sys: LinearizedSystem, op: str = "D",
                           count: int = 8, ghost_cutoff: float = 1e-6) -> list:
    """The `count` smallest weighted singular values of D or D* with their
    minimizing directions classified.

    Each entry is (sigma, kind) with kind one of 'ghost' (below the cutoff),
    'checkerboard' (amplitude-weighted sign-flip fraction above 1/2: a
    grid-frequency artifact that does not converge under refinement), or
    'resolved'.  Dense computation for diagnostic grids."""
    M = {"D": sys.D, "Dstar": sys.Dstar}[op]
    I = _interior_index(sys)
    MI = M[I][:, I].toarray()
    GI = sys.gram_l2()[I][:, I].toarray()
    HI = sys.gram_w12()[I][:, I].toarray()
    Lg = cholesky(GI, lower=True)
    Rh = cholesky(HI, lower=False)
    S = np.linalg.solve(Rh.T, (Lg.T @ MI).T).T
    U, sv, Vt = np.linalg.svd(S)
    order = np.argsort(sv)[:count]
    out = []
    for k in order:
        sigma = float(sv[k])
        v = np.linalg.solve(Rh, Vt[k])
        if sigma <= ghost_cutoff:
            kind = "ghost"
        elif checkerboard_fraction(sys, v) > 0.5:
            kind = "checkerboard"
        else:
            kind = "resolved"
        out.append((sigma, kind))
    return out


def checkerboard_fraction(sys: LinearizedSystem, v: np.ndarray) -> float:
    """Amplitude-weighted fraction of sign flips between consecutive nodes
    of a flat interior vector.  Values near 1 identify grid-frequency
    artifact modes with no continuum counterpart."""
    w = v.reshape(-1, sys.n)
    prod = np.sum(w[1:] * w[:-1], axis=1)
    total = np.abs(prod).sum()
    if total == 0:
        return 0.0
    return float(np.abs(prod[prod < 0]).sum() / total)


def smooth_subspace(sys: LinearizedSystem, q: int = 64) -> np.ndarray:
    """Columns: the first q Fourier-sine modes on [-T, T] per component,
    sampled on the grid (each vanishes at both boundary nodes).

    The central stencil is antisymmetric under the parity flip
    v_i -> (-1)^i v_i, which maps D-modes onto D*-modes; in particular the
    kernel of D reappears under D* at grid frequency, and sqrt(dt) boundary
    artifacts crowd the bottom of every full-grid pencil.  None of these
    survive in the span of resolved (bandlimited) modes, so singular-value
    floors are measured on this subspace.
    """
    t = sys.grid.times()
    T = sys.grid.T
    phases = (np.arange(1, q + 1)[None, :] * np.pi * (t[:, None] + T)) / (2.0 * T)
    modes = np.sin(phases)                       # (m, q)
    V = np.zeros((sys.size, q * sys.n))
    for a in range(sys.n):
        V[a::sys.n, a * q:(a + 1) * q] = modes
    return V


def sigma_min_subspace(sys: LinearizedSystem, K: sp.spmatrix,
                       border: np.ndarray | None = None, q: int = 64) -> float:
    """Smallest generalized singular value sqrt(min v^T K v / v^T H v) over
    the resolved-frequency subspace, optionally restricted to the
    hyperplane border^T v = 0."""
    from scipy.linalg import eigh, null_space

    V = smooth_subspace(sys, q)
    A1 = V.T @ (K @ V)
    B1 = V.T @ (sys.gram_w12() @ V)
    if border is not None:
        Z = null_space((V.T @ border)[None, :])
        A1 = Z.T @ A1 @ Z
        B1 = Z.T @ B1 @ Z
    lam = eigh(A1, B1, eigvals_only=True, subset_by_index=[0, 0])[0]
    return float(np.sqrt(max(lam, 0.0)))


def dstar_sigma_floor(sys: LinearizedSystem, q: int = 64) -> float:
    """Measured surjectivity floor: the smallest eps-weighted singular value
    of D* over resolved directions (see smooth_subspace for why the
    full-grid minimum is degenerate: the parity flip maps the kernel of D
    into a machine-zero D* ghost)."""
    K = (sys.Dstar.T @ sys.gram_l2() @ sys.Dstar).tocsr()
    return sigma_min_subspace(sys, K, q=q)


def kernel_spectrum_summary(sys: LinearizedSystem) -> dict:
    """Smallest two weighted singular values of D and their gap ratio."""
    sv = weighted_singular_values(sys, "D")
    sv = np.sort(sv)
    return {"sigma0": float(sv[0]), "sigma1": float(sv[1]),
            "gap_ratio": float(sv[1] / max(sv[0], 1e-300))}
