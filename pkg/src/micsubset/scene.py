"""WASN geometry, narrowband spectral model and transmission costs.

Positions are 2D coordinates in meters. Acoustic transfer functions use a
free-field point-source model, ``a_k = exp(-j w d_k / c) / d_k``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SPEED_OF_SOUND = 343.0
MIN_DISTANCE = 1e-6

# Reference room: 12 x 12 m, source, fusion center and two interferers.
ROOM_SIZE = 12.0
REF_TARGET = (2.4, 9.6)
REF_FC = (9.0, 3.0)
REF_INTERFERERS = ((2.4, 2.4), (9.6, 9.6))


class SceneError(ValueError):
    """Invalid scene geometry or parameters."""


@dataclass(frozen=True)
class Scene:
    mic_positions: np.ndarray
    target_position: np.ndarray
    interferer_positions: np.ndarray
    fc_position: np.ndarray
    target_psd: float = 1.0
    interferer_psds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    self_noise_snr_db: float = 50.0
    speed_of_sound: float = SPEED_OF_SOUND
    device_cost: np.ndarray | float = 0.0
    # Overrides the SNR-calibrated self-noise variance when set.
    self_noise_power: float | None = None

    def __post_init__(self):
        mics = np.atleast_2d(np.asarray(self.mic_positions, dtype=float))
        if mics.shape[1] != 2 or mics.shape[0] < 1:
            raise SceneError("mic_positions must be an (M, 2) array with M >= 1")
        interf = np.asarray(self.interferer_positions, dtype=float).reshape(-1, 2)
        psds = np.asarray(self.interferer_psds, dtype=float).reshape(-1)
        if psds.size == 0 and len(interf):
            psds = np.zeros(len(interf))
        if psds.shape[0] != interf.shape[0]:
            raise SceneError("one PSD per interferer required")
        target = np.asarray(self.target_position, dtype=float).reshape(2)
        fc = np.asarray(self.fc_position, dtype=float).reshape(2)
        dev = np.broadcast_to(np.asarray(self.device_cost, dtype=float), (mics.shape[0],)).copy()

        for arr in (mics, interf, target, fc, psds, dev):
            if not np.all(np.isfinite(arr)):
                raise SceneError("scene values must be finite")
        if self.target_psd <= 0:
            raise SceneError("target PSD must be positive")
        if np.any(psds < 0):
            raise SceneError("interferer PSDs must be nonnegative")
        if self.speed_of_sound <= 0:
            raise SceneError("speed of sound must be positive")
        if np.any(dev < 0):
            raise SceneError("device costs must be nonnegative")
        if self.self_noise_power is not None and self.self_noise_power <= 0:
            raise SceneError("self-noise power must be positive")
        for src in (target, *interf):
            if np.min(np.linalg.norm(mics - src, axis=1)) <= MIN_DISTANCE:
                raise SceneError("source coincides with microphone")

        object.__setattr__(self, "mic_positions", mics)
        object.__setattr__(self, "interferer_positions", interf)
        object.__setattr__(self, "interferer_psds", psds)
        object.__setattr__(self, "target_position", target)
        object.__setattr__(self, "fc_position", fc)
        object.__setattr__(self, "device_cost", dev)

    @property
    def num_mics(self) -> int:
        return self.mic_positions.shape[0]

    def with_fc(self, fc_position) -> "Scene":
        return replace(self, fc_position=np.asarray(fc_position, dtype=float))

    def self_noise_variance(self) -> float:
        """Self-noise variance, referenced to the mean received target power."""
        if self.self_noise_power is not None:
            return float(self.self_noise_power)
        gain = np.mean(1.0 / distances(self.mic_positions, self.target_position) ** 2)
        return float(gain * self.target_psd * 10.0 ** (-self.self_noise_snr_db / 10.0))


@dataclass(frozen=True)
class SpectralModel:
    """Second-order statistics of one narrowband frequency bin."""

    omega: float
    a: np.ndarray
    R_nn: np.ndarray
    R_xx: np.ndarray
    R_yy: np.ndarray
    P_s: float
    b: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=complex))
    interferer_psds: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma2: float = 0.0

    @property
    def num_mics(self) -> int:
        return self.a.shape[0]

    def restrict(self, indices) -> "SpectralModel":
        """Statistics of the sensors in ``indices`` (rows/columns removed)."""
        idx = np.asarray(indices, dtype=int)
        sub = np.ix_(idx, idx)
        return SpectralModel(
            omega=self.omega,
            a=self.a[idx],
            R_nn=self.R_nn[sub],
            R_xx=self.R_xx[sub],
            R_yy=self.R_yy[sub],
            P_s=self.P_s,
            b=self.b[:, idx] if self.b.size else self.b,
            interferer_psds=self.interferer_psds,
            sigma2=self.sigma2,
        )


def distances(points, origin) -> np.ndarray:
    return np.linalg.norm(np.atleast_2d(points) - np.asarray(origin, dtype=float), axis=1)


def steering_vector(scene: Scene, source_pos, omega: float) -> np.ndarray:
    """Free-field ATF from ``source_pos`` to every microphone."""
    if omega <= 0:
        raise ValueError("omega must be positive")
    d = distances(scene.mic_positions, source_pos)
    if np.min(d) <= MIN_DISTANCE:
        raise SceneError("source coincides with microphone")
    return np.exp(-1j * omega * d / scene.speed_of_sound) / d


def build_spectral_model(scene: Scene, omega: float) -> SpectralModel:
    a = steering_vector(scene, scene.target_position, omega)
    M = scene.num_mics
    b = np.array([steering_vector(scene, q, omega) for q in scene.interferer_positions])
    b = b.reshape(-1, M)
    sigma2 = scene.self_noise_variance()
    R_nn = sigma2 * np.eye(M, dtype=complex)
    for bq, pq in zip(b, scene.interferer_psds):
        R_nn += pq * np.outer(bq, bq.conj())
    R_nn = 0.5 * (R_nn + R_nn.conj().T)
    R_xx = scene.target_psd * np.outer(a, a.conj())
    return SpectralModel(
        omega=float(omega),
        a=a,
        R_nn=R_nn,
        R_xx=R_xx,
        R_yy=R_xx + R_nn,
        P_s=float(scene.target_psd),
        b=b,
        interferer_psds=scene.interferer_psds.copy(),
        sigma2=sigma2,
    )


def transmission_costs(scene: Scene) -> np.ndarray:
    """Squared-distance-to-FC costs plus device costs, normalized to sum 1."""
    raw = distances(scene.mic_positions, scene.fc_position) ** 2 + scene.device_cost
    total = raw.sum()
    if total <= 0:
        raise SceneError("all transmission costs are zero; cannot normalize")
    return raw / total


def estimate_sample_covariance(snapshots) -> np.ndarray:
    Y = np.asarray(snapshots)
    if Y.ndim != 2 or Y.shape[0] == 0:
        raise ValueError("need at least one snapshot")
    R = Y.T @ Y.conj() / Y.shape[0]
    return 0.5 * (R + R.conj().T)


def _cn(rng: np.random.Generator, size, power) -> np.ndarray:
    scale = np.sqrt(np.asarray(power, dtype=float) / 2.0)
    return scale * (rng.standard_normal(size) + 1j * rng.standard_normal(size))


def generate_snapshots(model: SpectralModel, L: int, seed: int, *, speech: bool = True) -> np.ndarray:
    """Draw ``L`` circularly-symmetric Gaussian snapshots, shape (L, M).

    With ``speech=False`` the target term is omitted (noise-only frames).
    """
    if L < 1:
        raise ValueError("L must be >= 1")
    rng = np.random.default_rng(seed)
    M = model.num_mics
    s = _cn(rng, L, model.P_s)
    Y = np.outer(s, model.a) if speech else np.zeros((L, M), dtype=complex)
    for bq, pq in zip(model.b, model.interferer_psds):
        Y = Y + np.outer(_cn(rng, L, pq), bq)
    return Y + _cn(rng, (L, M), model.sigma2)


def estimated_model(model: SpectralModel, L: int, seed: int) -> SpectralModel:
    """Replace model covariances by sample estimates from synthetic frames.

    R_nn comes from noise-only frames, R_yy from noisy frames and R_xx is
    their difference projected onto the PSD cone.
    """
    R_nn = estimate_sample_covariance(generate_snapshots(model, L, seed, speech=False))
    R_yy = estimate_sample_covariance(generate_snapshots(model, L, seed + 1))
    w, V = np.linalg.eigh(R_yy - R_nn)
    R_xx = (V * np.maximum(w, 0.0)) @ V.conj().T
    return replace(model, R_nn=R_nn, R_yy=R_yy, R_xx=R_xx)


# -- construction helpers ---------------------------------------------------


def grid_positions(nx: int, ny: int, width_m: float, height_m: float) -> np.ndarray:
    """Uniform grid including the room boundary, row-major in y then x."""
    xs = np.linspace(0.0, width_m, nx)
    ys = np.linspace(0.0, height_m, ny)
    X, Y = np.meshgrid(xs, ys)
    return np.column_stack([X.ravel(), Y.ravel()])


def psd_for_sir(mics, target, target_psd, source, sir_db) -> float:
    """Source PSD giving mean received power ``sir_db`` below the target's."""
    g_t = np.mean(1.0 / distances(mics, target) ** 2)
    g_q = np.mean(1.0 / distances(mics, source) ** 2)
    return float(target_psd * g_t / g_q * 10.0 ** (-sir_db / 10.0))


def reference_scene(full_size: bool = False, *, sir_db: float = 0.0, self_noise_snr_db: float = 50.0,
                interferers: bool = True) -> Scene:
    """Reference geometry; 7x7 desk grid by default, 13x13 when ``full_size``."""
    n = 13 if full_size else 7
    mics = grid_positions(n, n, ROOM_SIZE, ROOM_SIZE)
    interf = np.array(REF_INTERFERERS) if interferers else np.zeros((0, 2))
    psds = [psd_for_sir(mics, REF_TARGET, 1.0, q, sir_db) for q in interf]
    return Scene(mics, REF_TARGET, interf, REF_FC, 1.0, np.array(psds), self_noise_snr_db)


def random_scene(M: int, seed: int, *, room: float = ROOM_SIZE, n_interferers: int = 2,
                 sir_db: float = 0.0, self_noise_snr_db: float = 30.0) -> Scene:
    """Uniformly scattered microphones with random source, FC and interferers."""
    rng = np.random.default_rng(seed)
    while True:
        mics = rng.uniform(0.0, room, size=(M, 2))
        target = rng.uniform(0.0, room, size=2)
        interf = rng.uniform(0.0, room, size=(n_interferers, 2))
        fc = rng.uniform(0.0, room, size=2)
        srcs = np.vstack([target[None, :], interf])
        if min(np.min(distances(mics, s)) for s in srcs) > 0.05:
            break
    psds = [psd_for_sir(mics, target, 1.0, q, sir_db) for q in interf]
    return Scene(mics, target, interf, fc, 1.0, np.array(psds), self_noise_snr_db)


def scene_from_dict(doc: dict, base_dir: Path | None = None) -> Scene:
    """Build a Scene from the JSON document schema (``mics`` or ``grid``)."""
    if "file" in doc:
        path = Path(doc["file"])
        if base_dir is not None and not path.is_absolute():
            path = base_dir / path
        return load_scene(path)
    try:
        if "grid" in doc:
            g = doc["grid"]
            mics = grid_positions(int(g["nx"]), int(g["ny"]), float(g["width_m"]), float(g["height_m"]))
        else:
            mics = np.asarray(doc["mics"], dtype=float)
        target = np.asarray(doc["target"], dtype=float)
        fc = np.asarray(doc["fc"], dtype=float)
    except KeyError as exc:
        raise SceneError(f"scene: missing key {exc.args[0]!r}") from None
    interf = np.asarray(doc.get("interferers", []), dtype=float).reshape(-1, 2)
    P_s = float(doc.get("P_s", 1.0))
    if "interferer_psds" in doc:
        psds = np.asarray(doc["interferer_psds"], dtype=float)
    else:
        sir = doc.get("sir_db", 0.0)
        sirs = np.broadcast_to(np.asarray(sir, dtype=float), (len(interf),))
        psds = np.array([psd_for_sir(mics, target, P_s, q, s) for q, s in zip(interf, sirs)])
    return Scene(
        mic_positions=mics,
        target_position=target,
        interferer_positions=interf,
        fc_position=fc,
        target_psd=P_s,
        interferer_psds=psds,
        self_noise_snr_db=float(doc.get("self_noise_snr_db", 50.0)),
        speed_of_sound=float(doc.get("speed_of_sound", SPEED_OF_SOUND)),
        device_cost=doc.get("device_cost", 0.0),
        self_noise_power=doc.get("self_noise_power"),
    )


def load_scene(path) -> Scene:
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    return scene_from_dict(doc, path.parent)


def scene_to_dict(scene: Scene) -> dict:
    return {
        "mics": scene.mic_positions.tolist(),
        "target": scene.target_position.tolist(),
        "interferers": scene.interferer_positions.tolist(),
        "interferer_psds": scene.interferer_psds.tolist(),
        "fc": scene.fc_position.tolist(),
        "P_s": scene.target_psd,
        "self_noise_snr_db": scene.self_noise_snr_db,
        "speed_of_sound": scene.speed_of_sound,
        "device_cost": scene.device_cost.tolist(),
        "self_noise_power": scene.self_noise_power,
    }
