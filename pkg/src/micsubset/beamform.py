"""MVDR beamforming on a subset of microphones."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .scene import SpectralModel


class EmptySelectionError(ValueError):
    pass


@dataclass(frozen=True)
class SelectionVector:
    """Per-microphone selection in [0, 1]; boolean when every entry is 0 or 1."""

    p: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.p, dtype=float).reshape(-1)
        if np.any(p < 0) or np.any(p > 1) or not np.all(np.isfinite(p)):
            raise ValueError("selection entries must lie in [0, 1]")
        object.__setattr__(self, "p", p)

    @classmethod
    def from_indices(cls, indices, M: int) -> "SelectionVector":
        p = np.zeros(M)
        p[np.asarray(list(indices), dtype=int)] = 1.0
        return cls(p)

    @classmethod
    def full(cls, M: int) -> "SelectionVector":
        return cls(np.ones(M))

    @property
    def is_boolean(self) -> bool:
        return bool(np.all((self.p == 0) | (self.p == 1)))

    @property
    def K(self) -> int:
        return int(np.count_nonzero(self.p))

    @property
    def indices(self) -> np.ndarray:
        if not self.is_boolean:
            raise ValueError("index set is only defined for boolean selections")
        return np.flatnonzero(self.p)

    def cost(self, c) -> float:
        return float(np.dot(self.p, c))


@dataclass(frozen=True)
class BeamformerWeights:
    w: np.ndarray
    selected_indices: np.ndarray


def as_selection(sel, M: int) -> SelectionVector:
    if isinstance(sel, SelectionVector):
        return sel
    # bool or float arrays are per-microphone masks; integer arrays are indices
    arr = np.asarray(sel)
    if arr.dtype == bool:
        return SelectionVector(arr.astype(float))
    if np.issubdtype(arr.dtype, np.floating):
        if arr.shape != (M,):
            raise ValueError("float selections must have one entry per microphone")
        return SelectionVector(arr)
    return SelectionVector.from_indices(arr.astype(int), M)


def _selected(model: SpectralModel, sel) -> np.ndarray:
    s = as_selection(sel, model.num_mics)
    if not s.is_boolean:
        raise ValueError("beamforming requires a boolean selection")
    idx = s.indices
    if idx.size == 0:
        raise EmptySelectionError("no sensors selected")
    return idx


def _solve_sub(model: SpectralModel, idx: np.ndarray):
    R = model.R_nn[np.ix_(idx, idx)]
    a_p = model.a[idx]
    z = cho_solve(cho_factor(R, lower=True), a_p)
    return R, a_p, z


def mvdr_weights(model: SpectralModel, sel) -> BeamformerWeights:
    idx = _selected(model, sel)
    _, a_p, z = _solve_sub(model, idx)
    return BeamformerWeights(z / np.vdot(a_p, z), idx)


def snr_gain(model: SpectralModel, sel) -> float:
    """a_p^H R_nn,p^-1 a_p (the inverse output noise power)."""
    idx = _selected(model, sel)
    _, a_p, z = _solve_sub(model, idx)
    return float(np.vdot(a_p, z).real)


def output_noise_power(model: SpectralModel, sel) -> float:
    return 1.0 / snr_gain(model, sel)


def output_snr(model: SpectralModel, sel) -> float:
    return model.P_s * snr_gain(model, sel)


def full_noise_power(model: SpectralModel) -> float:
    """beta: the output noise power when every microphone is used."""
    return output_noise_power(model, np.ones(model.num_mics))


def filtered_power(weights: BeamformerWeights, R: np.ndarray) -> float:
    """w^H R_p w for the rows/columns of R picked by the weights' support."""
    idx = weights.selected_indices
    w = weights.w
    return float(np.vdot(w, R[np.ix_(idx, idx)] @ w).real)


def rearranged_Q(model: SpectralModel, sel, lam: float, G: np.ndarray) -> np.ndarray:
    """Q = G^-1 - G^-1 (G^-1 + diag(p)/lam)^-1 G^-1 for R_nn = lam I + G.

    Accepts relaxed selections; for boolean p this equals
    Phi_p^T R_nn,p^-1 Phi_p (see :func:`selected_inverse`).
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    G = np.asarray(G)
    if np.min(np.linalg.eigvalsh(0.5 * (G + G.conj().T))) <= 0:
        raise ValueError("G must be positive definite")
    p = as_selection(sel, model.num_mics).p
    Ginv = np.linalg.inv(G)
    Ginv = 0.5 * (Ginv + Ginv.conj().T)
    inner = Ginv + np.diag(p) / lam
    Q = Ginv - Ginv @ np.linalg.solve(inner, Ginv)
    return 0.5 * (Q + Q.conj().T)


def selected_inverse(model: SpectralModel, sel, lam: float, G: np.ndarray) -> np.ndarray:
    """Phi_p^T (lam I_K + Phi_p G Phi_p^T)^-1 Phi_p, embedded back in M x M."""
    idx = _selected(model, sel)
    M = model.num_mics
    Q = np.zeros((M, M), dtype=complex)
    sub = np.ix_(idx, idx)
    Q[sub] = np.linalg.inv(lam * np.eye(idx.size) + G[sub])
    return Q


def psd_sqrt(R: np.ndarray) -> np.ndarray:
    """Principal square root of a Hermitian PSD matrix (negative eigenvalues floored)."""
    w, V = np.linalg.eigh(0.5 * (R + R.conj().T))
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.conj().T


def snr_trace_form(model: SpectralModel, Q: np.ndarray) -> float:
    """trace(R_xx^{H/2} Q R_xx^{1/2})."""
    S = psd_sqrt(model.R_xx)
    return float(np.trace(S.conj().T @ Q @ S).real)


def marginal_snr_gains(model: SpectralModel, idx, candidates) -> np.ndarray:
    """Increase of a^H R^-1 a when each candidate is added to ``idx``.

    Uses the Schur complement of the bordered covariance, so every candidate
    costs O(K^2) after one O(K^3) factorization.
    """
    cand = np.asarray(candidates, dtype=int)
    idx = np.asarray(idx, dtype=int)
    a = model.a
    R = model.R_nn
    if idx.size == 0:
        return np.abs(a[cand]) ** 2 / R[cand, cand].real
    fac = cho_factor(R[np.ix_(idx, idx)], lower=True)
    X = cho_solve(fac, R[np.ix_(idx, cand)])
    z = cho_solve(fac, a[idx])
    schur = R[cand, cand].real - np.einsum("ij,ij->j", R[np.ix_(idx, cand)].conj(), X).real
    resid = a[cand] - R[np.ix_(cand, idx)] @ z
    return np.abs(resid) ** 2 / np.maximum(schur, np.finfo(float).tiny)
