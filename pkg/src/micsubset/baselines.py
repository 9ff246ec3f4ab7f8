"""Reference selection methods: weighted sparse MVDR, radius-based MVDR and
utility-driven greedy sensor addition."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .beamform import SelectionVector, marginal_snr_gains, mvdr_weights, snr_gain
from .scene import Scene, SpectralModel
from .select_greedy import (
    SelectionTrace,
    TraceRecord,
    default_transmission_range,
    expand_candidates,
    initial_candidates,
)

SPARSE_EPS = 1e-5
KKT_TOL = 1e-6
ADMM_MAX_ITER = 5000


@dataclass(frozen=True)
class SparseBeamformerConfig:
    mu: float
    epsilon: float = SPARSE_EPS
    relaxation: str = "l1"
    logsum_rounds: int = 3

    def __post_init__(self):
        if not self.mu >= 0:
            raise ValueError("mu must be nonnegative")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.relaxation not in ("l1", "log-sum"):
            raise ValueError(f"unknown relaxation {self.relaxation!r}")
        if self.logsum_rounds < 1:
            raise ValueError("logsum_rounds must be >= 1")


@dataclass(frozen=True)
class SparseResult:
    w: np.ndarray
    selection: SelectionVector
    cost: float
    weight_noise_power: float  # w^H R_nn w of the thresholded weights
    noise_power: float  # MVDR re-derived on the selected support
    objective: float
    kkt_residual: float
    iterations: int


def sparse_objective(model: SpectralModel, costs, mu: float, w) -> float:
    w = np.asarray(w)
    return float(np.vdot(w, model.R_nn @ w).real + mu * np.dot(costs, np.abs(w)))


def kkt_residual(R: np.ndarray, a: np.ndarray, weights: np.ndarray, w: np.ndarray, tol: float = 0.0) -> float:
    """Scaled distance of 0 from 2Rw + weights * d|w| - nu a, minimized over nu.

    Entries with |w_i| <= tol are treated as zero, where any subgradient of
    modulus <= weights_i is admissible.
    """
    g = 2.0 * (R @ w)
    act = np.abs(w) > tol
    y = np.zeros_like(w)
    y[act] = weights[act] * w[act] / np.abs(w[act])
    base = g + y
    # nu minimizing the active-set residual; inactive entries only need |g_i - nu a_i| <= weights_i
    aa = a[act]
    nu = np.vdot(aa, base[act]) / np.vdot(aa, aa).real if np.any(act) else 0.0
    r_act = base[act] - nu * aa
    r_in = np.maximum(np.abs(g[~act] - nu * a[~act]) - weights[~act], 0.0)
    scale = max(np.linalg.norm(g), np.linalg.norm(weights * act), np.finfo(float).tiny)
    return float(np.sqrt(np.sum(np.abs(r_act) ** 2) + np.sum(r_in**2)) / scale)


def _polish(R: np.ndarray, a: np.ndarray, weights: np.ndarray, w0: np.ndarray,
            max_newton: int = 30) -> np.ndarray | None:
    """Newton's method on the support of ``w0``, where the objective is smooth.

    Works in real coordinates x = [Re w_S, Im w_S] with the two real rows of
    a^H w = 1 as equality constraints. Returns None if the support collapses.
    """
    S = np.flatnonzero(np.abs(w0) > 0)
    K = S.size
    Rs = R[np.ix_(S, S)]
    Rr = np.block([[Rs.real, -Rs.imag], [Rs.imag, Rs.real]])
    aS = a[S]
    A = np.vstack([np.concatenate([aS.real, aS.imag]), np.concatenate([-aS.imag, aS.real])])
    c = weights[S]

    def f(x):
        w = x[:K] + 1j * x[K:]
        return float(x @ Rr @ x + np.dot(c, np.abs(w)))

    x = np.concatenate([w0[S].real, w0[S].imag])
    for _ in range(max_newton):
        u, v = x[:K], x[K:]
        r = np.hypot(u, v)
        if np.any(r <= 0):
            return None
        eu, ev = u / r, v / r
        g = 2.0 * Rr @ x + np.concatenate([c * eu, c * ev])
        H = 2.0 * Rr.copy()
        k = c / r
        H[np.arange(K), np.arange(K)] += k * (1 - eu * eu)
        H[np.arange(K, 2 * K), np.arange(K, 2 * K)] += k * (1 - ev * ev)
        H[np.arange(K), np.arange(K, 2 * K)] -= k * eu * ev
        H[np.arange(K, 2 * K), np.arange(K)] -= k * eu * ev
        KKT = np.block([[H, A.T], [A, np.zeros((2, 2))]])
        try:
            sol = np.linalg.solve(KKT, np.concatenate([-g, np.zeros(2)]))
        except np.linalg.LinAlgError:
            return None
        dx = sol[: 2 * K]
        dec = -g @ dx
        if dec <= 1e-15 * max(abs(f(x)), np.finfo(float).tiny):
            break
        t, fx = 1.0, f(x)
        while t > 1e-10:
            xn = x + t * dx
            if np.all(np.hypot(xn[:K], xn[K:]) > 0) and f(xn) <= fx - 0.25 * t * dec:
                break
            t *= 0.5
        else:
            return None
        x = xn
    w = np.zeros_like(w0)
    w[S] = x[:K] + 1j * x[K:]
    return w


def _weighted_l1_mvdr(R: np.ndarray, a: np.ndarray, weights: np.ndarray, w0: np.ndarray,
                      max_iter: int, tol: float) -> tuple[np.ndarray, int]:
    """ADMM on min w^H R w + sum weights_i |z_i| s.t. a^H w = 1, w = z."""
    M = a.size
    rho = float(np.trace(R).real) * 2.0 / M
    w = w0.copy()
    z = w0.copy()
    u = np.zeros(M, dtype=complex)

    def factor(rho):
        fac = cho_factor(2.0 * R + rho * np.eye(M), lower=True)
        Aa = cho_solve(fac, a)
        return fac, Aa, np.vdot(a, Aa).real

    fac, Aa, aAa = factor(rho)
    it = 0
    for it in range(1, max_iter + 1):
        v = rho * (z - u)
        x = cho_solve(fac, v)
        w = x + ((1.0 - np.vdot(a, x)) / aAa) * Aa
        z_old = z
        q = w + u
        mag = np.abs(q)
        shrink = np.maximum(mag - weights / rho, 0.0)
        z = np.where(mag > 0, q * (shrink / np.where(mag > 0, mag, 1.0)), 0.0)
        u = u + w - z
        r_prim = np.linalg.norm(w - z)
        r_dual = rho * np.linalg.norm(z - z_old)
        scale = max(np.linalg.norm(w), np.finfo(float).tiny)
        if r_prim <= 1e-3 * tol * scale and r_dual <= 1e-3 * tol * scale * rho:
            zz = z / np.vdot(a, z) if np.any(z) else w
            if kkt_residual(R, a, weights, zz) <= tol:
                return zz, it
        if it % 50 == 0 and np.any(z):
            zp = _polish(R, a, weights, z / np.vdot(a, z))
            if zp is not None and kkt_residual(R, a, weights, zp) <= tol:
                return zp, it
        # residual balancing
        if it % 20 == 0:
            if r_prim > 10 * r_dual:
                rho *= 2.0
                u /= 2.0
                fac, Aa, aAa = factor(rho)
            elif r_dual > 10 * r_prim:
                rho /= 2.0
                u *= 2.0
                fac, Aa, aAa = factor(rho)
    zz = z / np.vdot(a, z) if np.any(z) else w
    return zz, it


def sparse_mvdr(model: SpectralModel, costs, config: SparseBeamformerConfig,
                max_iter: int = ADMM_MAX_ITER, tol: float = KKT_TOL) -> SparseResult:
    """Cost-weighted l1 (or reweighted log-sum) sparse MVDR, thresholded at epsilon."""
    costs = np.asarray(costs, dtype=float)
    R = model.R_nn
    a = model.a
    M = a.size
    w = mvdr_weights(model, np.ones(M, dtype=bool)).w
    weights = config.mu * costs
    total_it = 0
    if config.mu > 0:
        # Work on a scale-free problem: dividing the objective by tr(R)/M leaves the minimizer unchanged.
        s = float(np.trace(R).real) / M
        rounds = 1 if config.relaxation == "l1" else config.logsum_rounds
        for _ in range(rounds):
            w, it = _weighted_l1_mvdr(R / s, a, weights / s, w, max_iter, tol)
            total_it += it
            if config.relaxation == "log-sum":
                weights = config.mu * costs / (np.abs(w) + config.epsilon) * config.epsilon
        resid = kkt_residual(R / s, a, weights / s, w)
    else:
        resid = kkt_residual(R, a, np.zeros(M), w)
    active = np.abs(w) >= config.epsilon
    if not np.any(active):
        active[np.argmax(np.abs(w))] = True
    w_thr = np.where(active, w, 0.0)
    sel = SelectionVector(active.astype(float))
    return SparseResult(
        w=w,
        selection=sel,
        cost=float(costs[active].sum()),
        weight_noise_power=float(np.vdot(w_thr, R @ w_thr).real),
        noise_power=1.0 / snr_gain(model, active),
        objective=sparse_objective(model, costs, config.mu, w),
        kkt_residual=resid,
        iterations=total_it,
    )


def mu_scale(model: SpectralModel, costs) -> float:
    """Value of mu at which the sparsity term matches beta at the MVDR solution."""
    w = mvdr_weights(model, np.ones(model.num_mics, dtype=bool)).w
    beta = 1.0 / snr_gain(model, np.ones(model.num_mics, dtype=bool))
    return float(beta / max(np.dot(costs, np.abs(w)), np.finfo(float).tiny))


@dataclass(frozen=True)
class RadiusResult:
    selection: SelectionVector
    cost: float
    noise_power: float


def radius_select(scene: Scene, model: SpectralModel, gamma: float, costs=None) -> RadiusResult:
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    d = np.linalg.norm(scene.mic_positions - scene.fc_position, axis=1)
    mask = d <= gamma * (1.0 + 1e-12)
    if not np.any(mask):
        raise ValueError("no sensors within radius")
    cost = float(np.sum(costs[mask])) if costs is not None else float("nan")
    return RadiusResult(SelectionVector(mask.astype(float)), cost, 1.0 / snr_gain(model, mask))


@dataclass
class UtilityStep:
    added: int
    utilities: dict  # candidate index -> utility at that step


def _utility(delta: np.ndarray, c: np.ndarray) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        g = np.where(c > 0, delta / np.where(c > 0, c, 1.0), np.where(delta > 0, np.inf, 0.0))
    return g


def utility_greedy(scene: Scene, model: SpectralModel, costs, c_T: float, z0=None, R0: float | None = None,
                   keep_steps: bool = False) -> tuple[SelectionVector, SelectionTrace] | tuple[SelectionVector, SelectionTrace, list]:
    """Add the sensor with the largest noise-power reduction per unit cost until the budget is reached.

    The first addition (empty S2) ranks candidates by 1 / noise_power({i}),
    i.e. their single-sensor SNR gain per unit cost. The trace's
    ``op_count`` accumulates |S2|^2 (|S1| - |S2|) per iteration.
    """
    if not c_T > 0:
        raise ValueError("c_T must be positive")
    costs = np.asarray(costs, dtype=float)
    M = model.num_mics
    R0 = default_transmission_range(scene) if R0 is None else float(R0)
    S1 = initial_candidates(scene, scene.fc_position if z0 is None else z0, R0)
    S2: list[int] = []
    trace = SelectionTrace()
    steps = []
    cost = 0.0
    it = 0
    while cost < c_T:
        cand = np.setdiff1d(S1, S2)
        if cand.size == 0:
            break
        it += 1
        trace.op_count += float(len(S2)) ** 2 * cand.size
        gains = marginal_snr_gains(model, np.asarray(S2, dtype=int), cand)
        if S2:
            g0 = snr_gain(model, np.asarray(S2, dtype=int))
            delta = 1.0 / g0 - 1.0 / (g0 + gains)
        else:
            delta = gains
        util = _utility(np.maximum(delta, 0.0), costs[cand])
        k = int(cand[np.argmax(util)])
        if keep_steps:
            steps.append(UtilityStep(k, dict(zip(cand.tolist(), util.tolist()))))
        S2.append(k)
        cost = float(costs[S2].sum())
        idx = np.asarray(sorted(S2), dtype=int)
        trace.append(TraceRecord(it, "utility", int(S1.size), len(S2), cost, 1.0 / snr_gain(model, idx)))
        S1 = np.union1d(S1, expand_candidates(scene, idx, R0))
    sel = SelectionVector.from_indices(S2, M)
    return (sel, trace, steps) if keep_steps else (sel, trace)
