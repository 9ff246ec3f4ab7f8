"""Experiment runner: configs, per-bin runs, parameter sweeps, moving-FC runs
and complexity reports. Outputs are CSV tables plus a JSON metadata file."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import beamform as bf
from .baselines import SparseBeamformerConfig, mu_scale, radius_select, sparse_mvdr, utility_greedy
from .scene import (
    Scene,
    SceneError,
    build_spectral_model,
    reference_scene,
    random_scene,
    scene_from_dict,
    transmission_costs,
)
from .select_greedy import GreedyError, default_transmission_range, greedy_select, warm_restart
from .select_model import (
    InfeasibleError,
    SolverFailure,
    brute_force_select,
    select_model_driven,
    select_uncorrelated,
)

METHODS = ("model_rxx", "model_steering", "uncorrelated", "greedy", "sparse", "radius", "utility", "brute_force")
# which sweep parameter drives which method
PARAM_METHODS = {
    "alpha": ("model_rxx", "model_steering", "uncorrelated", "greedy", "brute_force"),
    "mu": ("sparse",),
    "mu_rel": ("sparse",),
    "gamma": ("radius",),
    "c_T": ("utility",),
}
DEFAULT_FREQS_HZ = tuple(float(f) for f in np.geomspace(125.0, 4000.0, 8))
RECHECK_RTOL = 1e-6

RESULT_COLUMNS = ("freq_hz", "omega", "method", "param", "value", "K", "cost", "noise_power",
                  "noise_power_db", "beta", "feasible", "status", "iterations", "op_count", "selected")
SWEEP_COLUMNS = ("method", "parameter", "value", "freq_hz", "transmission_cost", "output_noise_power_db",
                 "noise_power", "K", "feasible")
MOVING_COLUMNS = ("waypoint", "fc_x", "fc_y", "freq_hz", "iterations", "K", "cost", "noise_power_db",
                  "beta_db", "feasible", "selected")
COMPLEXITY_COLUMNS = ("method", "init", "freq_hz", "iterations", "op_count", "normalized")


class ConfigError(ValueError):
    pass


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.12g}"
    return str(x)


def write_csv(path_or_fh, columns, rows) -> str:
    """Write rows (dicts) with fixed column order and 12-significant-digit floats."""
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(r[c]) for c in columns])
    text = out.getvalue()
    if path_or_fh is not None:
        if hasattr(path_or_fh, "write"):
            path_or_fh.write(text)
        else:
            Path(path_or_fh).write_text(text)
    return text


# -- configuration -------------------------------------------------------------


@dataclass
class ExperimentConfig:
    scene: object = "reference"
    method: str = "model_steering"
    frequencies_hz: list = field(default_factory=lambda: list(DEFAULT_FREQS_HZ))
    alpha: float = 0.65
    mu: float | None = None
    mu_rel: float = 1.0
    gamma: float = 6.0
    c_T: float = 0.09
    z0: object = "fc"
    R0: float | None = None
    seed: int = 0
    draws: int = 200
    greedy_draws: int = 50
    relaxation: str = "l1"
    aggregation: str = "per_bin"
    full_size: bool = False
    out: str | None = None

    def __post_init__(self):
        if self.method not in METHODS:
            raise ConfigError(f"method: unknown method {self.method!r}; expected one of {', '.join(METHODS)}")
        if not self.frequencies_hz:
            raise ConfigError("frequencies_hz: must be nonempty")
        try:
            self.frequencies_hz = [float(f) for f in self.frequencies_hz]
        except (TypeError, ValueError):
            raise ConfigError("frequencies_hz: must be a list of numbers") from None
        if any(f <= 0 for f in self.frequencies_hz):
            raise ConfigError("frequencies_hz: entries must be positive")
        if not 0 < float(self.alpha) <= 1:
            raise ConfigError("alpha: must lie in (0, 1]")
        if self.mu is not None and self.mu < 0:
            raise ConfigError("mu: must be nonnegative")
        if self.mu_rel < 0:
            raise ConfigError("mu_rel: must be nonnegative")
        if self.gamma <= 0:
            raise ConfigError("gamma: must be positive")
        if self.c_T <= 0:
            raise ConfigError("c_T: must be positive")
        if self.R0 is not None and self.R0 <= 0:
            raise ConfigError("R0: must be positive")
        if self.aggregation not in ("per_bin", "union"):
            raise ConfigError("aggregation: expected 'per_bin' or 'union'")
        if self.relaxation not in ("l1", "log-sum"):
            raise ConfigError("relaxation: expected 'l1' or 'log-sum'")

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        if not isinstance(doc, dict):
            raise ConfigError("config: top level must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(doc) - known - {"omegas"})
        if unknown:
            raise ConfigError(f"{unknown[0]}: unknown field")
        doc = dict(doc)
        if "omegas" in doc:
            doc["frequencies_hz"] = [float(w) / (2 * np.pi) for w in doc.pop("omegas")]
        try:
            return cls(**doc)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    cfg = ExperimentConfig.from_dict(doc)
    if isinstance(cfg.scene, str) and cfg.scene not in ("reference", "reference-full") and not cfg.scene.startswith("random"):
        p = Path(cfg.scene)
        cfg.scene = str(p if p.is_absolute() else path.parent / p)
    return cfg


def resolve_scene(cfg: ExperimentConfig) -> Scene:
    desc = cfg.scene
    try:
        if desc == "reference" or desc == "reference-full":
            return reference_scene(full_size=cfg.full_size or desc == "reference-full")
        if isinstance(desc, dict) and "random" in desc:
            r = desc["random"]
            return random_scene(int(r["M"]), int(r.get("seed", cfg.seed)))
        if isinstance(desc, dict):
            return scene_from_dict(desc)
        if isinstance(desc, str):
            with open(desc) as fh:
                return scene_from_dict(json.load(fh), Path(desc).parent)
    except (SceneError, KeyError, ValueError, OSError) as exc:
        raise ConfigError(f"scene: {exc}") from None
    raise ConfigError("scene: expected 'reference', 'reference-full', a file path or an object")


def resolve_point(scene: Scene, desc) -> np.ndarray:
    named = {"fc": scene.fc_position, "source": scene.target_position,
             "centre": scene.mic_positions.mean(axis=0), "center": scene.mic_positions.mean(axis=0)}
    if isinstance(desc, str):
        if desc in named:
            return np.asarray(named[desc], dtype=float)
        if desc.startswith("interferer"):
            k = int(desc[len("interferer"):] or 0)
            return scene.interferer_positions[k]
        raise ConfigError(f"z0: unknown initial point {desc!r}")
    pt = np.asarray(desc, dtype=float)
    if pt.shape != (2,):
        raise ConfigError("z0: expected a name or [x, y]")
    return pt


# -- single runs ------------------------------------------------------------------


def _param(cfg: ExperimentConfig, method: str):
    if method in PARAM_METHODS["alpha"]:
        return "alpha", float(cfg.alpha)
    if method == "sparse":
        return ("mu", float(cfg.mu)) if cfg.mu is not None else ("mu_rel", float(cfg.mu_rel))
    if method == "radius":
        return "gamma", float(cfg.gamma)
    return "c_T", float(cfg.c_T)


def run_bin(scene: Scene, cfg: ExperimentConfig, freq_hz: float, costs=None) -> dict:
    """Run the configured method on one frequency bin and return a result row."""
    omega = 2 * np.pi * freq_hz
    model = build_spectral_model(scene, omega)
    costs = transmission_costs(scene) if costs is None else costs
    M = model.num_mics
    beta = bf.full_noise_power(model)
    method = cfg.method
    name, value = _param(cfg, method)
    iterations, op_count, status = 0, float(M) ** 3, "n/a"
    trace = None
    if method in ("model_steering", "model_rxx"):
        form = "steering" if method == "model_steering" else "rxx"
        res = select_model_driven(model, costs, cfg.alpha, form, cfg.draws, cfg.seed)
        mask, status = res.selection.p.astype(bool), res.solver_status
    elif method == "uncorrelated":
        diag = replace(model, R_nn=np.diag(np.diag(model.R_nn)))
        res = select_uncorrelated(diag, costs, cfg.alpha)
        mask, status = res.selection.p.astype(bool), "rule"
    elif method == "brute_force":
        res = brute_force_select(model, costs, cfg.alpha)
        mask, status = res.selection.p.astype(bool), res.solver_status
    elif method == "greedy":
        res, trace = greedy_select(scene, model, costs, cfg.alpha, z0=resolve_point(scene, cfg.z0), R0=cfg.R0,
                                   num_draws=cfg.greedy_draws, seed=cfg.seed)
        mask, status = res.selection.p.astype(bool), "converged"
        iterations, op_count = trace.iterations, trace.op_count
    elif method == "sparse":
        mu = cfg.mu if cfg.mu is not None else cfg.mu_rel * mu_scale(model, costs)
        res = sparse_mvdr(model, costs, SparseBeamformerConfig(mu, relaxation=cfg.relaxation))
        mask, iterations = res.selection.p.astype(bool), res.iterations
        status = "converged" if res.kkt_residual <= 1e-6 else "max_iter"
    elif method == "radius":
        res = radius_select(scene, model, cfg.gamma, costs)
        mask, status = res.selection.p.astype(bool), "n/a"
    else:
        sel, trace = utility_greedy(scene, model, costs, cfg.c_T, z0=resolve_point(scene, cfg.z0), R0=cfg.R0)
        mask, status = sel.p.astype(bool), "budget"
        iterations, op_count = trace.iterations, trace.op_count
    noise = bf.output_noise_power(model, mask)
    if method in PARAM_METHODS["alpha"]:
        # independent recheck with beamform primitives only
        feasible = bool(noise <= beta / cfg.alpha * (1.0 + RECHECK_RTOL))
    else:
        feasible = True
    return {
        "freq_hz": float(freq_hz), "omega": omega, "method": method, "param": name, "value": value,
        "K": int(mask.sum()), "cost": float(costs[mask].sum()), "noise_power": noise,
        "noise_power_db": 10 * np.log10(noise), "beta": beta, "feasible": feasible, "status": status,
        "iterations": iterations, "op_count": op_count,
        "selected": " ".join(str(i) for i in np.flatnonzero(mask)),
        "_trace": trace, "_mask": mask,
    }


@dataclass
class RunOutput:
    rows: list
    summary: dict
    files: dict


def run_experiment(cfg: ExperimentConfig, out_dir=None) -> RunOutput:
    """Run one method over all configured bins; deterministic given the seeds."""
    scene = resolve_scene(cfg)
    if cfg.method == "brute_force" and scene.num_mics > 20:
        raise ConfigError(f"method: brute_force enumerates 2^M subsets; M = {scene.num_mics} exceeds 20")
    costs = transmission_costs(scene)
    rows = [run_bin(scene, cfg, f, costs) for f in cfg.frequencies_hz]
    summary = {"method": cfg.method, "M": scene.num_mics, "aggregation": cfg.aggregation,
               "all_feasible": all(r["feasible"] for r in rows),
               "statuses": [r["status"] for r in rows]}
    if cfg.aggregation == "union":
        union = np.any([r["_mask"] for r in rows], axis=0)
        worst = max(bf.output_noise_power(build_spectral_model(scene, 2 * np.pi * f), union)
                    for f in cfg.frequencies_hz)
        summary.update(union_selected=np.flatnonzero(union).tolist(), union_cost=float(costs[union].sum()),
                       union_worst_noise_power_db=float(10 * np.log10(worst)))
    else:
        summary.update(total_cost=float(sum(r["cost"] for r in rows)),
                       mean_noise_power_db=float(np.mean([r["noise_power_db"] for r in rows])))
    files = {}
    out_dir = out_dir if out_dir is not None else cfg.out
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files["results"] = out / "results.csv"
        write_csv(files["results"], RESULT_COLUMNS, rows)
        for r in rows:
            if r["_trace"] is not None:
                p = out / f"trace_{r['freq_hz']:.6g}Hz.csv"
                p.write_text(r["_trace"].to_csv())
                files[p.stem] = p
        files["meta"] = out / "meta.json"
        meta = {"config": cfg.to_dict(), "seed": cfg.seed, "summary": summary}
        files["meta"].write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default) + "\n")
    return RunOutput(rows, summary, files)


def _json_default(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, np.generic):
        return x.item()
    raise TypeError(type(x).__name__)


# -- sweeps --------------------------------------------------------------------------


def parse_grid(text: str) -> list[float]:
    """'start:step:stop' (inclusive) or a comma-separated list."""
    try:
        if ":" in text:
            start, step, stop = (float(t) for t in text.split(":"))
            if step <= 0 or stop < start:
                raise ValueError
            n = int(np.floor((stop - start) / step + 1e-9)) + 1
            return [round(start + k * step, 12) for k in range(n)]
        vals = [float(t) for t in text.split(",") if t.strip()]
        if not vals:
            raise ValueError
        return vals
    except ValueError:
        raise ConfigError(f"grid: cannot parse {text!r}") from None


def sweep_tradeoff(cfg: ExperimentConfig, grids: dict, methods=None, include_relaxed: bool = True,
                   out_path=None) -> list[dict]:
    """Cost / noise-power rows for every (method, parameter value, bin).

    ``grids`` maps a parameter name (alpha, mu, mu_rel, gamma, c_T) to its
    values. The relaxed lower bound (cost c^T p, noise 1 / a^H Q(p) a) is
    added for alpha sweeps of the SDP methods.
    """
    if not grids or any(len(v) == 0 for v in grids.values()):
        raise ConfigError("grid: sweep grids must be nonempty")
    for name in grids:
        if name not in PARAM_METHODS:
            raise ConfigError(f"param: unknown sweep parameter {name!r}")
    scene = resolve_scene(cfg)
    costs = transmission_costs(scene)
    rows = []
    for name, values in grids.items():
        use = [m for m in (methods or [cfg.method]) if m in PARAM_METHODS[name]]
        for method in use:
            for v in values:
                sub = replace(cfg, method=method, **{name: float(v)})
                if name == "mu_rel":
                    sub = replace(sub, mu=None)
                for f in cfg.frequencies_hz:
                    r = run_bin(scene, sub, f, costs)
                    rows.append(_sweep_row(method, name, v, f, r["cost"], r["noise_power"], r["K"], r["feasible"]))
                    if include_relaxed and method.startswith("model_"):
                        rows.append(relaxed_row(scene, sub, f, costs, method, name, v))
    write_csv(out_path, SWEEP_COLUMNS, rows) if out_path is not None else None
    return rows


def _sweep_row(method, name, value, f, cost, noise, K, feasible) -> dict:
    return {"method": method, "parameter": name, "value": float(value), "freq_hz": float(f),
            "transmission_cost": float(cost), "output_noise_power_db": 10 * np.log10(noise),
            "noise_power": float(noise), "K": K, "feasible": feasible}


def relaxed_row(scene, cfg, f, costs, method, name, value) -> dict:
    from .select_model import decompose_noise, solve_relaxed

    model = build_spectral_model(scene, 2 * np.pi * f)
    form = "steering" if method == "model_steering" else "rxx"
    p, _ = solve_relaxed(model, costs, cfg.alpha, form)
    dec = decompose_noise(model.R_nn)
    Q = bf.rearranged_Q(model, p, dec.lam, dec.G)
    gain = float(np.vdot(model.a, Q @ model.a).real)
    return _sweep_row(method + "_relaxed", name, value, f, float(np.dot(p, costs)), 1.0 / gain, int(np.sum(p > 0.5)), True)


# -- moving fusion centre ---------------------------------------------------------------


def rectangle_path(start, width: float, height: float, step: float) -> list[np.ndarray]:
    """Closed rectangle walked counter-clockwise from ``start`` in ``step`` increments (start not repeated)."""
    x0, y0 = map(float, start)
    corners = [(x0, y0), (x0, y0 + height), (x0 - width, y0 + height), (x0 - width, y0), (x0, y0)]
    pts = []
    for (xa, ya), (xb, yb) in zip(corners[:-1], corners[1:]):
        n = int(round(max(abs(xb - xa), abs(yb - ya)) / step))
        for k in range(n):
            pts.append(np.array([xa + (xb - xa) * k / n, ya + (yb - ya) * k / n]))
    return pts


def moving_fc_run(cfg: ExperimentConfig, fc_path, out_dir=None) -> list[dict]:
    """Greedy selection at each waypoint, warm-started from the previous waypoint's selection."""
    path = [np.asarray(p, dtype=float) for p in fc_path]
    if not path:
        raise ConfigError("path: must be nonempty")
    base = resolve_scene(cfg)
    rows = []
    traces = []
    for f in cfg.frequencies_hz:
        model = build_spectral_model(base, 2 * np.pi * f)
        beta = bf.full_noise_power(model)
        prev = None
        for k, fc in enumerate(path):
            scene = base.with_fc(fc)
            costs = transmission_costs(scene)
            if prev is None:
                res, tr = greedy_select(scene, model, costs, cfg.alpha, z0=fc, R0=cfg.R0,
                                        num_draws=cfg.greedy_draws, seed=cfg.seed)
            else:
                res, tr = warm_restart(prev, scene, model, costs, cfg.alpha, R0=cfg.R0,
                                       num_draws=cfg.greedy_draws, seed=cfg.seed)
            prev = res
            noise = bf.output_noise_power(model, res.indices)
            rows.append({"waypoint": k + 1, "fc_x": fc[0], "fc_y": fc[1], "freq_hz": f, "iterations": tr.iterations,
                         "K": res.selection.K, "cost": res.cost, "noise_power_db": 10 * np.log10(noise),
                         "beta_db": 10 * np.log10(beta), "feasible": bool(noise <= beta / cfg.alpha * (1 + RECHECK_RTOL)),
                         "selected": " ".join(map(str, res.indices))})
            traces.append((k + 1, f, tr))
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_csv(out / "moving_fc.csv", MOVING_COLUMNS, rows)
        for k, f, tr in traces:
            (out / f"trace_wp{k:03d}_{f:.6g}Hz.csv").write_text(tr.to_csv())
    return rows


# -- complexity ---------------------------------------------------------------------------


def complexity_rows(scene: Scene, cfg: ExperimentConfig, inits: dict, freq_hz: float) -> list[dict]:
    """Operation-count proxies per initial point, normalized by the model-driven M^3.

    The utility method's budget c_T is matched to the greedy run's cost at the same initial point.
    """
    costs = transmission_costs(scene)
    model = build_spectral_model(scene, 2 * np.pi * freq_hz)
    M3 = float(model.num_mics) ** 3
    rows = [{"method": "model_driven", "init": "-", "freq_hz": freq_hz, "iterations": 1, "op_count": M3,
             "normalized": 1.0}]
    R0 = cfg.R0 if cfg.R0 is not None else default_transmission_range(scene)
    for name, z0 in inits.items():
        res, tr = greedy_select(scene, model, costs, cfg.alpha, z0=z0, R0=R0, num_draws=cfg.greedy_draws,
                                seed=cfg.seed)
        rows.append({"method": "greedy", "init": name, "freq_hz": freq_hz, "iterations": tr.iterations,
                     "op_count": tr.op_count, "normalized": tr.op_count / M3})
        _, ut = utility_greedy(scene, model, costs, max(res.cost, np.finfo(float).tiny), z0=z0, R0=R0)
        rows.append({"method": "utility", "init": name, "freq_hz": freq_hz, "iterations": ut.iterations,
                     "op_count": ut.op_count, "normalized": ut.op_count / M3})
    return rows


def complexity_report(run_dirs, out_path=None) -> list[dict]:
    """Aggregate op counts from finished run directories (results.csv + meta.json)."""
    rows = []
    for d in run_dirs:
        d = Path(d)
        try:
            meta = json.loads((d / "meta.json").read_text())
            with open(d / "results.csv") as fh:
                results = list(csv.DictReader(fh))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{d}: not a run directory ({exc})") from None
        M3 = float(meta["summary"]["M"]) ** 3
        init = meta["config"].get("z0", "-")
        for r in results:
            method = r["method"]
            if method.startswith("model_"):
                method = "model_driven"
            op = float(r["op_count"])
            rows.append({"method": method, "init": init if isinstance(init, str) else json.dumps(init),
                         "freq_hz": float(r["freq_hz"]), "iterations": int(r["iterations"]),
                         "op_count": op, "normalized": op / M3})
    if out_path is not None:
        write_csv(out_path, COMPLEXITY_COLUMNS, rows)
    return rows


SOLVER_ERRORS = (SolverFailure, InfeasibleError, GreedyError, np.linalg.LinAlgError)
