"""Data-driven two-phase greedy selection.

Starting from the microphones within ``R0`` of an initial point, the
candidate set S1 is grown around the currently selected set S2. Each
iteration solves the steering-vector relaxation restricted to S1 and rounds
it. The first phase uses the local bound beta_S1 / alpha (full-candidate-set
noise power); once S1 stops growing the bound switches to the global
beta / alpha and the loop continues until S1 is stable again.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .beamform import snr_gain
from .scene import Scene, SpectralModel
from .select_model import (
    SelectionResult,
    make_result,
    round_to_target,
    solve_relaxed,
)

GREEDY_DRAWS = 50
RANGE_RTOL = 1e-9

TRACE_COLUMNS = ("iter", "phase", "S1", "S2", "cost", "noise_power_db")


class GreedyError(RuntimeError):
    def __init__(self, message: str, trace: "SelectionTrace | None" = None):
        super().__init__(message)
        self.trace = trace


@dataclass(frozen=True)
class TraceRecord:
    iteration: int
    phase: str
    n_candidates: int
    n_selected: int
    cost: float
    noise_power: float

    @property
    def noise_power_db(self) -> float:
        return 10.0 * np.log10(self.noise_power) if np.isfinite(self.noise_power) else float("inf")


@dataclass
class SelectionTrace:
    records: list[TraceRecord] = field(default_factory=list)
    # Work proxy accumulated by the driver (sum |S1|^3 or sum |S2|^2 (|S1|-|S2|)).
    op_count: float = 0.0

    def append(self, rec: TraceRecord) -> None:
        if self.records and rec.iteration <= self.records[-1].iteration:
            raise ValueError("trace iterations must increase")
        self.records.append(rec)

    def __len__(self) -> int:
        return len(self.records)

    @property
    def iterations(self) -> int:
        return self.records[-1].iteration if self.records else 0

    def switch_iteration(self) -> int | None:
        """Iteration of the last local-phase record, if any."""
        loc = [r.iteration for r in self.records if r.phase == "local"]
        return loc[-1] if loc else None

    def to_csv(self, fh=None) -> str:
        out = io.StringIO() if fh is None else fh
        w = csv.writer(out, lineterminator="\n")
        w.writerow(TRACE_COLUMNS)
        for r in self.records:
            w.writerow([r.iteration, r.phase, r.n_candidates, r.n_selected,
                        f"{r.cost:.12g}", f"{r.noise_power_db:.12g}"])
        return out.getvalue() if fh is None else ""


@dataclass
class GreedyState:
    S1: np.ndarray
    S2: np.ndarray
    phase: str = "local"
    iteration: int = 0
    beta_S1: float = float("nan")
    trace: SelectionTrace = field(default_factory=SelectionTrace)


def _within(points, centres, R0: float) -> np.ndarray:
    centres = np.atleast_2d(centres)
    d = np.min(np.linalg.norm(points[:, None, :] - centres[None, :, :], axis=2), axis=1)
    return np.flatnonzero(d <= R0 * (1.0 + RANGE_RTOL))


def initial_candidates(scene: Scene, z0, R0: float) -> np.ndarray:
    if R0 <= 0:
        raise ValueError("R0 must be positive")
    S1 = _within(scene.mic_positions, np.asarray(z0, dtype=float), R0)
    if S1.size == 0:
        raise GreedyError("initial point isolated; increase R0")
    return S1


def expand_candidates(scene: Scene, S2, R0: float) -> np.ndarray:
    """S2 plus every microphone within R0 of any member of S2."""
    S2 = np.asarray(S2, dtype=int)
    if S2.size == 0:
        raise ValueError("S2 must be nonempty")
    near = _within(scene.mic_positions, scene.mic_positions[S2], R0)
    return np.union1d(S2, near)


def default_transmission_range(scene: Scene) -> float:
    """Grid spacing for grid layouts, sqrt(log(2M)/M) times the extent otherwise."""
    P = scene.mic_positions
    M = P.shape[0]
    if M == 1:
        return 1.0
    D = np.linalg.norm(P[:, None, :] - P[None, :, :], axis=2)
    np.fill_diagonal(D, np.inf)
    nn = D.min(axis=1)
    if np.allclose(nn, nn[0], rtol=1e-9):
        return float(nn[0])
    extent = float(np.max(np.ptp(P, axis=0)))
    return float(np.sqrt(np.log(2 * M) / M) * extent)


def _mask(idx, M: int) -> np.ndarray:
    m = np.zeros(M, dtype=bool)
    m[np.asarray(idx, dtype=int)] = True
    return m


def _record(state: GreedyState, model: SpectralModel, costs: np.ndarray, n_cand: int) -> None:
    S2 = state.S2
    noise = 1.0 / snr_gain(model, _mask(S2, model.num_mics)) if S2.size else float("inf")
    state.trace.append(TraceRecord(state.iteration, state.phase, n_cand, int(S2.size),
                                   float(costs[S2].sum()), noise))


def _select_within(model: SpectralModel, costs: np.ndarray, S1: np.ndarray, alpha: float,
                   beta: float, num_draws: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    sub = model.restrict(S1)
    p, _ = solve_relaxed(sub, costs[S1], alpha, "steering", beta)
    chosen = round_to_target(p, sub, costs[S1], alpha / beta, num_draws, seed)
    return S1[chosen], p


def greedy_select(scene: Scene, model: SpectralModel, costs, alpha: float, z0=None, R0: float | None = None,
                  max_iter: int | None = None, num_draws: int = GREEDY_DRAWS, seed: int = 0,
                  local_only: bool = False, init_selected=None,
                  update: str = "neighborhood") -> tuple[SelectionResult, SelectionTrace]:
    """Run the local/global greedy loop on one frequency bin.

    ``init_selected`` starts from a previous selection instead of ``z0``
    (warm restart) and resumes directly in the global phase. ``local_only``
    stops after the local phase; that variant does not guarantee the global
    noise-power bound. ``update`` picks the candidate update: "neighborhood"
    sets S1 to S2 plus its R0-neighbours, "union" also keeps the previous S1.
    Revisiting an earlier S1 within a phase counts as convergence.
    """
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    M = model.num_mics
    costs = np.asarray(costs, dtype=float)
    R0 = default_transmission_range(scene) if R0 is None else float(R0)
    max_iter = 4 * M + 4 if max_iter is None else int(max_iter)
    if max_iter < 1:
        raise ValueError("max_iter must be >= 1")
    beta = 1.0 / snr_gain(model, np.ones(M, dtype=bool))

    if init_selected is None:
        S1 = initial_candidates(scene, scene.fc_position if z0 is None else z0, R0)
        state = GreedyState(S1=S1, S2=np.zeros(0, dtype=int))
    else:
        S2 = np.unique(np.asarray(init_selected, dtype=int))
        state = GreedyState(S1=expand_candidates(scene, S2, R0), S2=S2)
    relaxed = np.zeros(M)
    seen: set = set()
    floor_box = [np.zeros(0, dtype=int)]

    def step(target_beta: float) -> bool:
        """One solve + expansion; returns True when S1 is unchanged."""
        state.iteration += 1
        if state.iteration > max_iter:
            raise GreedyError("greedy selection did not converge within max_iter", state.trace)
        S1 = state.S1
        state.trace.op_count += float(S1.size) ** 3
        sub_gain = snr_gain(model, _mask(S1, M))
        state.beta_S1 = 1.0 / sub_gain
        if state.phase == "global" and sub_gain < (alpha / target_beta) * (1.0 - 1e-10):
            # infeasible within S1: select all of it and never shrink below its neighbourhood again
            state.S2 = S1.copy()
            floor_box[0] = np.union1d(floor_box[0], expand_candidates(scene, S1, R0))
            _record(state, model, costs, int(S1.size))
            state.S1 = floor_box[0].copy()
            return False
        else:
            S2, p = _select_within(model, costs, S1, alpha, target_beta, num_draws, seed + state.iteration)
            state.S2 = S2
            relaxed[:] = 0.0
            relaxed[S1] = p
        _record(state, model, costs, int(S1.size))
        new_S1 = expand_candidates(scene, state.S2, R0)
        if update == "union":
            new_S1 = np.union1d(S1, new_S1)
        new_S1 = np.union1d(new_S1, floor_box[0])
        key = (state.phase, new_S1.tobytes())
        if np.array_equal(new_S1, S1) or key in seen:
            return True
        seen.add(key)
        state.S1 = new_S1
        return False

    if init_selected is not None and not local_only:
        # a previous converged run already passed the local phase
        state.phase = "global"
    while state.phase == "local" and not step(_local_beta(model, state.S1)):
        pass
    if not local_only:
        state.phase = "global"
        while not step(beta):
            pass

    mask = _mask(state.S2, M)
    target = alpha / (beta if not local_only else state.beta_S1)
    result = make_result(model, costs, mask, target, relaxed, "greedy")
    return result, state.trace


def _local_beta(model: SpectralModel, S1: np.ndarray) -> float:
    return 1.0 / snr_gain(model, _mask(S1, model.num_mics))


def warm_restart(prev: SelectionResult | np.ndarray, scene: Scene, model: SpectralModel, costs, alpha: float,
                 R0: float | None = None, **kwargs) -> tuple[SelectionResult, SelectionTrace]:
    """Re-run the greedy loop seeded with a previous selection (e.g. after the FC moved)."""
    idx = prev.indices if isinstance(prev, SelectionResult) else np.asarray(prev, dtype=int)
    return greedy_select(scene, model, costs, alpha, R0=R0, init_selected=idx, **kwargs)
