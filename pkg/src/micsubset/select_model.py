"""Model-driven microphone subset selection.

Minimize the total transmission cost c^T p subject to the MVDR output SNR
of the selected subset reaching a fraction ``alpha`` of the full-network
SNR. The Boolean problem is relaxed to p in [0, 1]^M through one of two
LMI formulations (speech-covariance based, or steering-vector based) and
then rounded back to a feasible Boolean selection.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import sdp
from .beamform import SelectionVector, marginal_snr_gains, snr_gain, psd_sqrt
from .scene import SpectralModel

# Relative slack used when comparing an achieved SNR gain against its target.
FEAS_RTOL = 1e-10


class InfeasibleError(RuntimeError):
    pass


class SolverFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class DecomposedNoise:
    lam: float
    G: np.ndarray
    G_inv: np.ndarray
    R_nn: np.ndarray


@dataclass
class SelectionResult:
    relaxed_p: np.ndarray
    selection: SelectionVector
    cost: float
    achieved_noise_power: float
    achieved_snr: float
    feasible: bool
    solver_status: str = "n/a"
    relaxed_cost: float = float("nan")

    @property
    def indices(self) -> np.ndarray:
        return self.selection.indices


def decompose_noise(R_nn: np.ndarray) -> DecomposedNoise:
    """R_nn = lam I + G with lam = half the smallest eigenvalue of R_nn."""
    R = 0.5 * (R_nn + R_nn.conj().T)
    w, V = np.linalg.eigh(R)
    if w[0] <= 0:
        raise ValueError("R_nn must be positive definite")
    lam = 0.5 * w[0]
    g = w - lam
    G = (V * g) @ V.conj().T
    G_inv = (V / g) @ V.conj().T
    return DecomposedNoise(lam, 0.5 * (G + G.conj().T), 0.5 * (G_inv + G_inv.conj().T), R)


def _check_alpha(alpha: float) -> None:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")


def _beta(model: SpectralModel, beta: float | None) -> float:
    return 1.0 / snr_gain(model, np.ones(model.num_mics)) if beta is None else float(beta)


def steering_lmi_matrix(model: SpectralModel, p, alpha: float, beta: float | None = None,
                        dec: DecomposedNoise | None = None) -> np.ndarray:
    """Hermitian (M+1) x (M+1) steering-vector LMI at selection p, scaled by lambda."""
    dec = dec or decompose_noise(model.R_nn)
    beta = _beta(model, beta)
    lG = dec.lam * dec.G_inv
    u = lG @ model.a
    corner = dec.lam * (np.vdot(model.a, dec.G_inv @ model.a).real - alpha / beta)
    H = np.block([[lG + np.diag(np.asarray(p, dtype=float)), u[:, None]],
                  [u.conj()[None, :], np.array([[corner]])]])
    return 0.5 * (H + H.conj().T)


def build_sdp_steering(model: SpectralModel, costs, alpha: float, beta: float | None = None) -> sdp.SdpProblem:
    """Relaxed selection problem with one LMI of size M+1 in p only."""
    _check_alpha(alpha)
    M = model.num_mics
    dec = decompose_noise(model.R_nn)
    beta = _beta(model, beta)
    H0 = steering_lmi_matrix(model, np.zeros(M), alpha, beta, dec)
    A0 = sdp.embed_hermitian(H0)
    d = 2 * (M + 1)
    rows = np.concatenate([np.arange(M), np.arange(M) + M + 1])
    cols = np.concatenate([np.arange(M), np.arange(M)])
    vec_idx = rows + rows * d  # column-major vec position of diagonal entries
    coeffs = sdp.sp.csc_matrix((np.ones(2 * M), (vec_idx, cols)), shape=(d * d, M))
    return sdp.SdpProblem(
        objective=np.asarray(costs, dtype=float),
        lmi_blocks=[sdp.LmiBlock(A0, coeffs)],
        lo=np.zeros(M),
        hi=np.ones(M),
        meta={"form": "steering", "M": M, "alpha": alpha, "beta": beta, "lam": dec.lam},
    )


def _sym_basis(n: int):
    iu, ju = np.triu_indices(n)
    return iu, ju


def rxx_lmi_matrix(model: SpectralModel, p, Z: np.ndarray, dec: DecomposedNoise | None = None) -> np.ndarray:
    """Real 4M x 4M speech-covariance LMI at (p, Z), scaled by lambda.

    ``Z`` is the real symmetric 2M x 2M auxiliary matrix.
    """
    dec = dec or decompose_noise(model.R_nn)
    S = psd_sqrt(model.R_xx)
    lG = dec.lam * dec.G_inv
    p = np.asarray(p, dtype=float)
    top_left = sdp.embed_hermitian(lG) + np.diag(np.concatenate([p, p]))
    off = sdp.embed_block(lG @ S)
    bottom = sdp.embed_hermitian(S.conj().T @ lG @ S) - dec.lam * Z
    return np.block([[top_left, off], [off.T, bottom]])


def build_sdp_rxx(model: SpectralModel, costs, alpha: float, beta: float | None = None) -> sdp.SdpProblem:
    """Relaxed selection problem built from R_xx with auxiliary matrix Z.

    Variables are p (first M) followed by the upper triangle of the real
    symmetric 2M x 2M matrix Z (row-major). The LMI has size 4M in real
    form and the trace row is ``trace(Z) >= 2 alpha P_s / beta``.
    """
    _check_alpha(alpha)
    w = np.linalg.eigvalsh(0.5 * (model.R_xx + model.R_xx.conj().T))
    if w[0] < -1e-10 * max(1.0, abs(w[-1])):
        raise ValueError("R_xx must be positive semidefinite")
    M = model.num_mics
    dec = decompose_noise(model.R_nn)
    beta = _beta(model, beta)
    m2 = 2 * M
    d = 2 * m2
    iu, ju = _sym_basis(m2)
    nz = iu.size
    A0 = rxx_lmi_matrix(model, np.zeros(M), np.zeros((m2, m2)), dec)

    r_idx, c_idx, vals = [], [], []
    for i in range(M):
        for k in (i, i + M):
            r_idx.append(k + k * d)
            c_idx.append(i)
            vals.append(1.0)
    for j, (a, b) in enumerate(zip(iu, ju)):
        ra, rb = m2 + a, m2 + b
        if a == b:
            r_idx.append(ra + ra * d)
            c_idx.append(M + j)
            vals.append(-dec.lam)
        else:
            r_idx += [ra + rb * d, rb + ra * d]
            c_idx += [M + j, M + j]
            vals += [-dec.lam, -dec.lam]
    coeffs = sdp.sp.csc_matrix((vals, (r_idx, c_idx)), shape=(d * d, M + nz))

    trace_row = np.zeros(M + nz)
    trace_row[M + np.flatnonzero(iu == ju)] = dec.lam
    obj = np.concatenate([np.asarray(costs, dtype=float), np.zeros(nz)])
    lo = np.concatenate([np.zeros(M), np.full(nz, -np.inf)])
    hi = np.concatenate([np.ones(M), np.full(nz, np.inf)])
    return sdp.SdpProblem(
        objective=obj,
        lmi_blocks=[sdp.LmiBlock(A0, coeffs)],
        lo=lo,
        hi=hi,
        G_lin=trace_row[None, :],
        h_lin=np.array([2.0 * dec.lam * alpha * model.P_s / beta]),
        meta={"form": "rxx", "M": M, "alpha": alpha, "beta": beta, "lam": dec.lam},
    )


def unpack_Z(problem: sdp.SdpProblem, x: np.ndarray) -> np.ndarray:
    M = problem.meta["M"]
    m2 = 2 * M
    iu, ju = _sym_basis(m2)
    Z = np.zeros((m2, m2))
    Z[iu, ju] = x[M:]
    Z[ju, iu] = x[M:]
    return Z


def pack_Z(Z: np.ndarray) -> np.ndarray:
    iu, ju = _sym_basis(Z.shape[0])
    return Z[iu, ju]


# -- rounding ----------------------------------------------------------------


def _feasible(gain: float, target: float) -> bool:
    return gain >= target * (1.0 - FEAS_RTOL)


def _repair(model: SpectralModel, costs: np.ndarray, mask: np.ndarray, target: float) -> tuple[np.ndarray, float]:
    """Add the best SNR-gain-per-cost sensor until the target gain is met."""
    mask = mask.copy()
    gain = snr_gain(model, mask) if mask.any() else 0.0
    while not _feasible(gain, target):
        cand = np.flatnonzero(~mask)
        if cand.size == 0:
            break
        inc = marginal_snr_gains(model, np.flatnonzero(mask), cand)
        c = costs[cand]
        with np.errstate(divide="ignore", invalid="ignore"):
            util = np.where(c > 0, inc / c, np.where(inc > 0, np.inf, 0.0))
        mask[cand[int(np.argmax(util))]] = True
        gain = snr_gain(model, mask)
    return mask, gain


def _key(mask: np.ndarray, costs: np.ndarray):
    return (float(costs[mask].sum()), int(mask.sum()), tuple(np.flatnonzero(mask)))


def _candidates(relaxed_p: np.ndarray, num_draws: int, rng: np.random.Generator):
    for t in np.unique(relaxed_p)[::-1]:
        yield relaxed_p >= t
    yield np.zeros(relaxed_p.size, dtype=bool)
    for _ in range(num_draws):
        yield rng.random(relaxed_p.size) < relaxed_p


def round_to_target(relaxed_p, model: SpectralModel, costs, target_gain: float,
                    num_draws: int = 200, seed: int = 0) -> np.ndarray:
    """Cheapest repaired Boolean candidate reaching ``a^H R^-1 a >= target_gain``."""
    if num_draws < 1:
        raise ValueError("num_draws must be >= 1")
    p = np.clip(np.asarray(relaxed_p, dtype=float), 0.0, 1.0)
    costs = np.asarray(costs, dtype=float)
    rng = np.random.default_rng(seed)
    best, best_key = None, None
    seen = set()
    for mask in _candidates(p, num_draws, rng):
        h = mask.tobytes()
        if h in seen:
            continue
        seen.add(h)
        fixed, gain = _repair(model, costs, mask, target_gain)
        if not _feasible(gain, target_gain):
            continue
        k = _key(fixed, costs)
        if best_key is None or k < best_key:
            best, best_key = fixed, k
    if best is None:
        raise InfeasibleError("alpha infeasible")
    return best


def make_result(model: SpectralModel, costs, mask, target_gain: float, relaxed_p=None,
                status: str = "n/a", relaxed_cost: float = float("nan")) -> SelectionResult:
    mask = np.asarray(mask, dtype=bool)
    costs = np.asarray(costs, dtype=float)
    gain = snr_gain(model, mask)
    return SelectionResult(
        relaxed_p=mask.astype(float) if relaxed_p is None else np.asarray(relaxed_p, dtype=float),
        selection=SelectionVector(mask.astype(float)),
        cost=float(costs[mask].sum()),
        achieved_noise_power=1.0 / gain,
        achieved_snr=model.P_s * gain,
        feasible=_feasible(gain, target_gain),
        solver_status=status,
        relaxed_cost=relaxed_cost,
    )


def round_selection(relaxed_p, model: SpectralModel, costs, alpha: float, num_draws: int = 200,
                    seed: int = 0, beta: float | None = None) -> SelectionResult:
    _check_alpha(alpha)
    target = alpha / _beta(model, beta)
    mask = round_to_target(relaxed_p, model, costs, target, num_draws, seed)
    return make_result(model, costs, mask, target, relaxed_p,
                       relaxed_cost=float(np.dot(np.clip(relaxed_p, 0, 1), costs)))


# -- full model-driven pipeline -----------------------------------------------


def solve_relaxed(model: SpectralModel, costs, alpha: float, form: str = "steering",
                  beta: float | None = None) -> tuple[np.ndarray, sdp.SdpSolution]:
    if form == "steering":
        problem = build_sdp_steering(model, costs, alpha, beta)
    elif form == "rxx":
        problem = build_sdp_rxx(model, costs, alpha, beta)
    else:
        raise ValueError(f"unknown relaxation form {form!r}")
    sol = sdp.solve(problem)
    if sol.status == "infeasible" or not np.all(np.isfinite(sol.x)):
        raise SolverFailure(f"SDP solve failed with status {sol.status}")
    return np.clip(sol.x[: model.num_mics], 0.0, 1.0), sol


def select_model_driven(model: SpectralModel, costs, alpha: float, form: str = "steering",
                        num_draws: int = 200, seed: int = 0, beta: float | None = None) -> SelectionResult:
    """Relax, solve the SDP and round to a feasible Boolean selection."""
    _check_alpha(alpha)
    beta = _beta(model, beta)
    p, sol = solve_relaxed(model, costs, alpha, form, beta)
    target = alpha / beta
    mask = round_to_target(p, model, costs, target, num_draws, seed)
    return make_result(model, costs, mask, target, p, sol.status, float(np.dot(p, costs)))


def select_uncorrelated(model: SpectralModel, costs, alpha: float, beta: float | None = None) -> SelectionResult:
    """Rank-ordering rule for spatially uncorrelated noise.

    Sensors are sorted by c_i sigma_i^2 / |a_i|^2 and the shortest prefix
    whose summed |a_i|^2 / sigma_i^2 reaches alpha / beta is selected.
    """
    _check_alpha(alpha)
    R = model.R_nn
    off = R - np.diag(np.diag(R))
    if np.linalg.norm(off) > 1e-10 * max(1.0, np.linalg.norm(R)):
        raise ValueError("noise covariance is not diagonal")
    sigma2 = np.diag(R).real
    costs = np.asarray(costs, dtype=float)
    contrib = np.abs(model.a) ** 2 / sigma2
    beta = 1.0 / contrib.sum() if beta is None else float(beta)
    with np.errstate(divide="ignore"):
        v = np.where(contrib > 0, costs / contrib, np.inf)
    order = np.argsort(v, kind="stable")
    target = alpha / beta
    total = np.cumsum(contrib[order])
    hit = np.flatnonzero(total >= target * (1.0 - FEAS_RTOL))
    k = int(hit[0]) + 1 if hit.size else order.size
    mask = np.zeros(model.num_mics, dtype=bool)
    mask[order[:k]] = True
    return make_result(model, costs, mask, target, status="closed_form")


def relaxed_uncorrelated_optimum(model: SpectralModel, costs, alpha: float) -> tuple[float, np.ndarray]:
    """Optimum of the steering-vector relaxation when R_nn is diagonal.

    With R_nn diagonal the LMI reduces to the separable concave constraint
    sum_i |a_i|^2 p_i / (lam + g_i p_i) >= alpha / beta, whose optimum
    follows from the KKT conditions by bisection on the multiplier.
    """
    sigma2 = np.diag(model.R_nn).real
    lam = 0.5 * sigma2.min()
    g = sigma2 - lam
    w = np.abs(model.a) ** 2
    c = np.asarray(costs, dtype=float)
    target = alpha * np.sum(w / sigma2)

    def p_of(nu):
        with np.errstate(divide="ignore", invalid="ignore"):
            raw = (np.sqrt(nu * w * lam / np.where(c > 0, c, np.inf)) - lam) / g
        raw = np.where(c > 0, raw, 1.0)
        return np.clip(raw, 0.0, 1.0)

    def f(p):
        return float(np.sum(w * p / (lam + g * p)))

    lo, hi = 0.0, 1.0
    while f(p_of(hi)) < target:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(p_of(mid)) >= target:
            hi = mid
        else:
            lo = mid
    p = p_of(hi)
    return float(c @ p), p


def fractional_lp_optimum(model: SpectralModel, costs, alpha: float) -> float:
    """Fractional-knapsack value of the linear constraint sum p_i |a_i|^2/sigma_i^2 >= alpha/beta."""
    sigma2 = np.diag(model.R_nn).real
    contrib = np.abs(model.a) ** 2 / sigma2
    c = np.asarray(costs, dtype=float)
    need = alpha * contrib.sum()
    total = 0.0
    for i in np.argsort(c / contrib, kind="stable"):
        take = min(1.0, need / contrib[i])
        total += take * c[i]
        need -= take * contrib[i]
        if need <= 0:
            break
    return total


# -- exhaustive oracle ----------------------------------------------------------


def brute_force_select(model: SpectralModel, costs, alpha: float, beta: float | None = None) -> SelectionResult:
    """Minimum-cost feasible subset by enumerating all 2^M - 1 subsets."""
    _check_alpha(alpha)
    M = model.num_mics
    if M > 20:
        raise ValueError("brute force limited to M <= 20")
    costs = np.asarray(costs, dtype=float)
    target = alpha / _beta(model, beta)
    best, best_key = None, None
    R = model.R_nn
    diag = np.linalg.norm(R - np.diag(np.diag(R))) == 0.0
    if diag:
        masks = ((np.arange(1, 2 ** M)[:, None] >> np.arange(M)) & 1).astype(bool)
        gains = masks @ (np.abs(model.a) ** 2 / np.diag(R).real)
        ok = gains >= target * (1.0 - FEAS_RTOL)
        for mask in masks[ok]:
            k = _key(mask, costs)
            if best_key is None or k < best_key:
                best, best_key = mask, k
    else:
        for K in range(1, M + 1):
            for combo in itertools.combinations(range(M), K):
                mask = np.zeros(M, dtype=bool)
                mask[list(combo)] = True
                c = costs[mask].sum()
                if best_key is not None and c > best_key[0]:
                    continue
                if not _feasible(snr_gain(model, mask), target):
                    continue
                k = _key(mask, costs)
                if best_key is None or k < best_key:
                    best, best_key = mask, k
    if best is None:
        raise InfeasibleError("alpha infeasible")
    return make_result(model, costs, best, target, status="exhaustive")
