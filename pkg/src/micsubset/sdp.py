"""Linear objective, LMI-constrained programs over box-bounded variables.

A problem is

    minimize    f^T x
    subject to  A0_k + sum_i x_i A_ik  >= 0     (PSD, one per block k)
                g_j^T x >= h_j
                lo <= x <= hi

The interior-point work is delegated to cvxopt's conic solver; this module
owns the problem representation, conditioning, status mapping and an
independent feasibility re-check.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

TOL_FEAS = 1e-6
TOL_GAP = 1e-7
MAX_ITER = 200
FIRST_PASS_ITER = 50
SYM_TOL = 1e-10


class SdpError(ValueError):
    pass


def symmetrize(A: np.ndarray, tol: float = SYM_TOL) -> np.ndarray:
    A = np.asarray(A)
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.conj().T)) > tol * scale:
        raise SdpError("matrix is not symmetric/Hermitian")
    return 0.5 * (A + A.conj().T)


def embed_hermitian(H: np.ndarray) -> np.ndarray:
    """Real symmetric [[Re H, -Im H], [Im H, Re H]] of a Hermitian H."""
    H = np.asarray(H, dtype=complex)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise SdpError("square matrix required")
    if np.max(np.abs(H - H.conj().T), initial=0.0) > SYM_TOL * max(1.0, np.max(np.abs(H), initial=0.0)):
        raise SdpError("matrix is not Hermitian")
    H = 0.5 * (H + H.conj().T)
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


def embed_block(H: np.ndarray) -> np.ndarray:
    """Real embedding of a (not necessarily Hermitian) complex block."""
    H = np.asarray(H, dtype=complex)
    return np.block([[H.real, -H.imag], [H.imag, H.real]])


@dataclass
class LmiBlock:
    """``A0 + sum_i x_i A_i >= 0``; coefficients stored as columns vec(A_i)."""

    A0: np.ndarray
    coeffs: sp.csc_matrix  # shape (d*d, n), column-major vec of each A_i

    @property
    def dim(self) -> int:
        return self.A0.shape[0]

    @classmethod
    def from_dense(cls, A0, As) -> "LmiBlock":
        A0 = symmetrize(np.asarray(A0, dtype=float))
        cols = [symmetrize(np.asarray(A, dtype=float)).ravel(order="F") for A in As]
        coeffs = sp.csc_matrix(np.column_stack(cols)) if cols else sp.csc_matrix((A0.size, 0))
        return cls(A0, coeffs)

    def matrix(self, x: np.ndarray) -> np.ndarray:
        d = self.dim
        M = self.A0 + (self.coeffs @ x).reshape(d, d, order="F")
        return 0.5 * (M + M.T)


@dataclass
class SdpProblem:
    objective: np.ndarray
    lmi_blocks: list[LmiBlock] = field(default_factory=list)
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    G_lin: np.ndarray | None = None  # rows g_j
    h_lin: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.objective = np.asarray(self.objective, dtype=float).reshape(-1)
        n = self.num_vars
        self.lo = np.full(n, -np.inf) if self.lo is None else np.asarray(self.lo, dtype=float)
        self.hi = np.full(n, np.inf) if self.hi is None else np.asarray(self.hi, dtype=float)
        if self.G_lin is None:
            self.G_lin = np.zeros((0, n))
            self.h_lin = np.zeros(0)
        self.G_lin = np.atleast_2d(np.asarray(self.G_lin, dtype=float)).reshape(-1, n)
        self.h_lin = np.asarray(self.h_lin, dtype=float).reshape(-1)
        if self.lo.shape != (n,) or self.hi.shape != (n,) or np.any(self.lo > self.hi):
            raise SdpError("box bounds must have length n with lo <= hi")
        if self.G_lin.shape[0] != self.h_lin.shape[0]:
            raise SdpError("linear rows and right-hand sides disagree")
        for blk in self.lmi_blocks:
            if blk.coeffs.shape != (blk.dim * blk.dim, n):
                raise SdpError("LMI block dimensions inconsistent with num_vars")

    @property
    def num_vars(self) -> int:
        return self.objective.shape[0]

    def scaled_objective(self, k: float) -> "SdpProblem":
        return SdpProblem(k * self.objective, self.lmi_blocks, self.lo, self.hi, self.G_lin, self.h_lin, dict(self.meta))


@dataclass
class SdpSolution:
    x: np.ndarray
    objective_value: float
    status: str  # optimal | infeasible | max_iter
    max_violation: float
    iterations: int = 0


def constraint_violation(problem: SdpProblem, x: np.ndarray) -> float:
    """Largest violation over LMI eigenvalues, linear rows and box bounds."""
    x = np.asarray(x, dtype=float)
    viol = 0.0
    for blk in problem.lmi_blocks:
        viol = max(viol, -float(np.linalg.eigvalsh(blk.matrix(x))[0]))
    if problem.G_lin.shape[0]:
        viol = max(viol, float(np.max(problem.h_lin - problem.G_lin @ x)))
    viol = max(viol, float(np.max(problem.lo - x, initial=0.0)), float(np.max(x - problem.hi, initial=0.0)))
    return max(viol, 0.0)


def _sym_lower(v: np.ndarray, d: int) -> np.ndarray:
    """Symmetric matrix from the lower triangle of a column-major d*d vector."""
    X = v.reshape(d, d, order="F")
    L = np.tril(X)
    return L + np.tril(X, -1).T


class _ConeData:
    """Scaled problem in cvxopt's conelp form with structured KKT solves.

    The LMI coefficient matrices are very sparse, so the reduced KKT matrix
    H_ij = tr(A_i V A_j V) is assembled from the nonzero entries only
    instead of applying the scaling to every column of G.
    """

    def __init__(self, Gl: np.ndarray, blocks: list[tuple[sp.csc_matrix, int]]):
        self.Gl = Gl
        self.nl = Gl.shape[0]
        self.blocks = []
        for C, d in blocks:
            coo = C.tocoo()
            B = sp.csc_matrix((coo.data, (np.arange(coo.nnz), coo.col)), shape=(coo.nnz, C.shape[1]))
            self.blocks.append((C.tocsr(), d, coo.row % d, coo.row // d, B))

    def G(self, u, v, alpha=1.0, beta=0.0, trans="N"):
        import cvxopt

        u_ = np.array(u).ravel()
        v_ = np.array(v).ravel()
        if trans == "N":
            out = [self.Gl @ u_]
            for C, d, *_ in self.blocks:
                out.append(-(C @ u_))
            res = np.concatenate(out)
        else:
            res = self.Gl.T @ u_[: self.nl]
            off = self.nl
            for C, d, *_ in self.blocks:
                U = _sym_lower(u_[off: off + d * d], d)
                res = res - C.T @ U.ravel(order="F")
                off += d * d
        v[:] = cvxopt.matrix(alpha * res + beta * v_)

    def kktsolver(self, W):
        import cvxopt

        dl = np.array(W["d"]).ravel()
        H = self.Gl.T @ (self.Gl / (dl ** 2)[:, None])
        scal = []
        for (C, d, rr, cc, B), rti in zip(self.blocks, W["rti"]):
            rti = np.array(rti)
            V = rti @ rti.T
            U = V[np.ix_(cc, rr)]
            H = H + (B.T @ (B.T @ (U * U.T)).T).T
            scal.append((V, rti))
        H = 0.5 * (H + H.T)
        fac = _factor(H)

        def f(x, y, z):
            bx = np.array(x).ravel()
            bz = np.array(z).ravel()
            rhs = bx + self.Gl.T @ (bz[: self.nl] / dl ** 2)
            off = self.nl
            mats = []
            for (C, d, rr, cc, B), (V, rti) in zip(self.blocks, scal):
                Bz = _sym_lower(bz[off: off + d * d], d)
                Y = V @ Bz @ V
                rhs = rhs - C.T @ Y.ravel(order="F")
                mats.append(Bz)
                off += d * d
            ux = _backsolve(fac, rhs)
            out = [(self.Gl @ ux - bz[: self.nl]) / dl]
            for (C, d, rr, cc, B), (V, rti), Bz in zip(self.blocks, scal, mats):
                Gu = -(C @ ux).reshape(d, d, order="F")
                Wz = rti.T @ (0.5 * (Gu + Gu.T) - Bz) @ rti
                out.append((0.5 * (Wz + Wz.T)).ravel(order="F"))
            x[:] = cvxopt.matrix(ux)
            z[:] = cvxopt.matrix(np.concatenate(out))

        return f


def _factor(H: np.ndarray):
    from scipy.linalg import cho_factor, LinAlgError

    try:
        return ("chol", cho_factor(H, lower=True))
    except LinAlgError:
        scale = max(np.max(np.abs(np.diag(H))), 1.0)
        return ("lstsq", H + 1e-14 * scale * np.eye(H.shape[0]))


def _backsolve(fac, rhs):
    from scipy.linalg import cho_solve

    kind, data = fac
    if kind == "chol":
        return cho_solve(data, rhs)
    return np.linalg.lstsq(data, rhs, rcond=None)[0]


def solve(problem: SdpProblem, tol: float = TOL_GAP, max_iter: int = MAX_ITER,
          tol_feas: float = TOL_FEAS) -> SdpSolution:
    """Solve with a primal-dual interior-point method (NT scaling).

    ``tol`` is the relative duality gap target; ``tol_feas`` bounds the
    constraint violation re-checked on the unscaled problem.
    """
    import cvxopt
    from cvxopt import solvers

    n = problem.num_vars
    f = problem.objective
    if not problem.lmi_blocks and not problem.G_lin.shape[0] and not (
            np.isfinite(problem.lo).any() or np.isfinite(problem.hi).any()):
        raise SdpError("problem has no constraints")

    # Column scaling x = D y so every variable has unit-size coefficients,
    # and per-block scaling of each LMI by its largest entry.
    col = np.zeros(n)
    blk_scale = []
    for blk in problem.lmi_blocks:
        s = max(np.max(np.abs(blk.A0), initial=0.0), abs(blk.coeffs).max() if blk.coeffs.nnz else 0.0, 1e-300)
        blk_scale.append(s)
        col = np.maximum(col, np.sqrt(np.asarray(blk.coeffs.multiply(blk.coeffs).sum(axis=0))).ravel() / s)
    Gn = np.zeros((0, n))
    hn = np.zeros(0)
    if problem.G_lin.shape[0]:
        row_norm = np.maximum(np.linalg.norm(problem.G_lin, axis=1), 1e-300)
        Gn = problem.G_lin / row_norm[:, None]
        hn = problem.h_lin / row_norm
        col = np.maximum(col, np.max(np.abs(Gn), axis=0))
    width = problem.hi - problem.lo
    finite_box = np.where(np.isfinite(width), width, 0.0)
    col = np.where(col > 0, col, np.where(finite_box > 0, 1.0 / np.maximum(finite_box, 1e-300), 1.0))
    D = 1.0 / col

    up = np.flatnonzero(np.isfinite(problem.hi))
    dn = np.flatnonzero(np.isfinite(problem.lo))
    Gl = np.vstack([-Gn * D, np.eye(n)[up], -np.eye(n)[dn]])
    hl = np.concatenate([-hn, problem.hi[up] / D[up], -problem.lo[dn] / D[dn]])

    blocks, h_parts = [], [hl]
    for blk, s in zip(problem.lmi_blocks, blk_scale):
        blocks.append(((blk.coeffs @ sp.diags(D)).tocsc() / s, blk.dim))
        h_parts.append((blk.A0 / s).ravel(order="F"))
    data = _ConeData(Gl, blocks)

    fy = f * D
    fscale = max(np.max(np.abs(fy)), 1e-300)
    dims = {"l": Gl.shape[0], "q": [], "s": [blk.dim for blk in problem.lmi_blocks]}
    h = cvxopt.matrix(np.concatenate(h_parts))
    c = cvxopt.matrix(fy / fscale)

    def attempt(iters: int):
        opts = {"show_progress": False, "maxiters": int(iters), "abstol": 1e-12,
                "reltol": tol, "feastol": 0.1 * tol_feas, "refinement": 2}
        try:
            res = solvers.conelp(c, data.G, h, dims, kktsolver=data.kktsolver, options=opts)
        except (ValueError, ArithmeticError):
            return SdpSolution(np.full(n, np.nan), np.nan, "max_iter", np.inf)
        used = int(res.get("iterations", 0) or 0)
        if res["status"] == "primal infeasible":
            return SdpSolution(np.full(n, np.nan), np.inf, "infeasible", np.inf, used)
        if res["x"] is None:
            return SdpSolution(np.full(n, np.nan), np.nan, "max_iter", np.inf, used)
        x = np.clip(D * np.array(res["x"]).ravel(), problem.lo, problem.hi)
        viol = constraint_violation(problem, x)
        gap = res.get("relative gap")
        # Near the precision floor the residuals can hover just above feastol
        # although the iterate is certified by the independent recheck.
        ok = res["status"] == "optimal" or (gap is not None and gap <= tol)
        status = "optimal" if ok and viol <= tol_feas else "max_iter"
        return SdpSolution(x, float(f @ x), status, viol, used)

    # A short first pass avoids burning the full budget on stalled iterates;
    # the full budget is only spent when that pass is not certified.
    first = attempt(min(max_iter, FIRST_PASS_ITER))
    if first.status != "max_iter" or max_iter <= FIRST_PASS_ITER:
        return first
    full = attempt(max_iter)
    full.iterations += first.iterations
    return full
