"""Experiment orchestration: build, settle, run trials, analyse, persist.

Output layout of a run directory::

    config.yaml            echo of the parsed configuration
    web.json               graph document of the (prey-loaded) web
    trial_NN.csv|json      per-trial leg accelerations (time_s, leg1..leg8)
    spectra.csv|json       per-leg mean and std of the amplitude spectra
    summary.json           peaks, dominant frequencies, decay times, prey decision
    manifest.json          config echo, seeds, file inventory with sha256 hashes
    timings.txt            wall-clock timings (kept out of the JSON artifacts so
                           those stay byte-identical between reruns)

All CSV/JSON writers use fixed float formatting and sorted keys; trials may
run in worker processes but are merged in trial order.
"""

from __future__ import annotations

import csv
import dataclasses
import hashlib
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import analysis as A
from .config import ConfigError, ExperimentConfig, config_to_dict, dump_config, load_config
from .dynamics import DivergenceError, NumericFault, SettleError, SystemState, run_trial, settle
from .graph import ConstructionError
from .spider import MotorProfile, UnreachableFoot, build_spider
from .system import System, assemble
from .web import PlacementError, attach_prey, build_web

logger = logging.getLogger(__name__)

OUTPUT_ENV = "CROUCHSIM_OUT"
EXIT_OK, EXIT_CONFIG, EXIT_DIVERGENCE, EXIT_ANALYSIS = 0, 2, 3, 4
SWEEP_PARAMETERS = ("prey_ring", "prey_mass", "foot_ring", "motor_rotation")
FLOAT_FMT = "{:.9e}"


class CompareError(A.AnalysisError):
    """Two runs cannot be compared (different grids or leg counts)."""


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, ConstructionError, PlacementError, UnreachableFoot)):
        return EXIT_CONFIG
    if isinstance(exc, (DivergenceError, NumericFault, SettleError)):
        return EXIT_DIVERGENCE
    if isinstance(exc, A.AnalysisError):
        return EXIT_ANALYSIS
    return 1


def error_record(exc: BaseException) -> dict:
    rec = {"error": type(exc).__name__, "message": str(exc), "exit_code": exit_code_for(exc)}
    if isinstance(exc, DivergenceError):
        rec["step"] = exc.step
    if isinstance(exc, SettleError):
        rec["residual"] = exc.residual
    return rec


# ---------------------------------------------------------------------------
# deterministic writers


def _fmt(v) -> str:
    return FLOAT_FMT.format(float(v))


def _json_default(o):
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _clean(o):
    """Round-trip floats through the fixed format and map non-finite values to None."""
    if isinstance(o, dict):
        return {str(k): _clean(v) for k, v in o.items()}
    if isinstance(o, (list, tuple)):
        return [_clean(v) for v in o]
    if isinstance(o, (float, np.floating)):
        return None if not math.isfinite(o) else float(_fmt(o))
    if isinstance(o, np.integer):
        return int(o)
    return o


def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(_clean(data), sort_keys=True, indent=1, default=_json_default) + "\n")


def write_table(path: Path, header: list[str], columns: list[np.ndarray], fmt: str = "csv") -> None:
    if fmt == "json":
        write_json(path, {h: np.asarray(c, dtype=float).tolist() for h, c in zip(header, columns)})
        return
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in zip(*columns):
        w.writerow([_fmt(v) for v in row])
    path.write_text(buf.getvalue())


def read_table(path: Path) -> dict[str, np.ndarray]:
    if path.suffix == ".json":
        data = json.loads(path.read_text())
        return {k: np.array([np.nan if v is None else v for v in vals], dtype=float) for k, vals in data.items()}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in r] for r in reader]
    arr = np.array(rows, dtype=float).reshape(-1, len(header))
    return {h: arr[:, i] for i, h in enumerate(header)}


def sha256_file(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# ---------------------------------------------------------------------------
# experiment


@dataclass
class Experiment:
    config: ExperimentConfig
    system: System
    settled: SystemState


def prepare(cfg: ExperimentConfig) -> Experiment:
    """Build the web (plus prey), hang the robot on it and settle under gravity."""
    cfg.validate()
    web = build_web(cfg.web)
    if cfg.prey is not None:
        web = attach_prey(web, cfg.prey)
    spider_spec = cfg.spider.to_spec(cfg.web)
    system = assemble(web, build_spider(spider_spec))
    settled = settle(system, cfg.sim)
    return Experiment(cfg, system, settled)


def trial_seeds(cfg: ExperimentConfig) -> list[int]:
    return [cfg.sim.seed + i for i in range(cfg.trials)]


def _trial_job(args):
    system, settled, motor, sim = args
    traces = run_trial(settled, system, motor, sim)
    return np.stack([t.samples for t in traces], axis=1)


def run_trials(exp: Experiment, jobs: int = 1) -> list[np.ndarray]:
    """Accelerations (samples x legs) of every trial, in trial order."""
    cfg = exp.config
    args = [(exp.system, exp.settled, cfg.motor, dataclasses.replace(cfg.sim, seed=s)) for s in trial_seeds(cfg)]
    if jobs <= 1 or len(args) == 1:
        return [_trial_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_job, args))


@dataclass
class Analysis:
    spectra: list[A.TrialStats]
    reports: list[A.PeakReport]
    decision: A.PreyDecision
    decay: list[float]
    windows: list


def motor_cycle_end(motor: MotorProfile) -> float:
    return motor.start_time + motor.ramp_up + motor.hold + motor.ramp_down


def secondary_peak(report: A.PeakReport, min_separation_bins: int = 2) -> A.Peak | None:
    """Strongest peak above the dominant one by at least ``min_separation_bins`` bins."""
    dom = report.dominant_peak
    if dom is None:
        return None
    for p in report.peaks:
        if p.index >= dom.index + min_separation_bins:
            return p
    return None


def analyse(cfg: ExperimentConfig, trials: list[np.ndarray]) -> Analysis:
    an = cfg.analysis
    fs = cfg.sim.sensor_rate
    n_legs = trials[0].shape[1]
    per_leg = []
    for leg in range(n_legs):
        spectra = []
        for acc in trials:
            y = A.lowpass_zero_phase(acc[:, leg], fs, an.filter_cutoff, an.filter_order)
            spectra.append(A.amplitude_spectrum(y, fs, an.window, an.taper))
        per_leg.append(A.aggregate_trials(spectra))
    reports = [A.find_spectral_peaks(s, an.min_prominence, an.peak_band) for s in per_leg]
    decision = A.classify_prey(per_leg, an.baseline_band, an.prey_band, an.min_legs, an.peak_band,
                               an.min_prominence, n_legs=n_legs)
    end = motor_cycle_end(cfg.motor)
    decay = []
    for leg in range(n_legs):
        times = [A.decay_time(acc[:, leg], fs, end, an.decay_fraction, cutoff=an.filter_cutoff) for acc in trials]
        decay.append(max(times))
    windows = []
    for acc in trials:
        try:
            windows.append(list(A.detect_crouch_window(acc[:, 0], fs)))
        except A.NoTransient:
            windows.append(None)
    return Analysis(per_leg, reports, decision, decay, windows)


def _peak_dict(p: A.Peak | None):
    return None if p is None else {"frequency_hz": p.frequency, "amplitude": p.amplitude,
                                   "prominence": p.prominence, "bin": p.index}


def summary_document(cfg: ExperimentConfig, exp: Experiment, res: Analysis) -> dict:
    legs = []
    for i, (rep, det) in enumerate(zip(res.reports, res.decision.legs)):
        sec = secondary_peak(rep)
        legs.append({
            "leg": i + 1,
            "peaks": [_peak_dict(p) for p in rep.peaks],
            "prominence_threshold": rep.threshold,
            "dominant_hz": None if rep.dominant_peak is None else rep.dominant_peak.frequency,
            "secondary_hz": None if sec is None else sec.frequency,
            "prey_band_peak": _peak_dict(det.prey),
            "decay_s": res.decay[i],
        })
    secondaries = [leg["secondary_hz"] for leg in legs if leg["secondary_hz"] is not None]
    dominants = [leg["dominant_hz"] for leg in legs if leg["dominant_hz"] is not None]
    return {
        "n_trials": cfg.trials,
        "seeds": trial_seeds(cfg),
        "system_hash": exp.system.content_hash(),
        "frequency_resolution_hz": float(res.spectra[0].resolution),
        "legs": legs,
        "baseline_hz": float(np.median(dominants)) if dominants else None,
        "prey_peak_hz": float(np.median(secondaries)) if secondaries else None,
        "classification": {"decision": res.decision.label, "legs_with_prey_peak": res.decision.n_detected,
                           "min_legs": res.decision.min_legs},
        "crouch_windows_s": res.windows,
        "prey": None if cfg.prey is None else dataclasses.asdict(cfg.prey),
    }


def resolve_output(cfg: ExperimentConfig, out: str | os.PathLike | None) -> Path:
    if out is not None:
        return Path(out)
    env = os.environ.get(OUTPUT_ENV)
    if env:
        return Path(env)
    return Path(cfg.output_dir)


def cmd_run(cfg: ExperimentConfig, out=None, jobs: int = 1, fmt: str = "csv") -> dict:
    """Full experiment; returns the manifest (also written to ``manifest.json``)."""
    t_start = time.perf_counter()
    cfg.validate()
    out_dir = resolve_output(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    timings = {}
    t = time.perf_counter()
    exp = prepare(cfg)
    timings["build_and_settle_s"] = time.perf_counter() - t
    t = time.perf_counter()
    trials = run_trials(exp, jobs)
    timings["trials_s"] = time.perf_counter() - t
    t = time.perf_counter()
    res = analyse(cfg, trials)
    timings["analysis_s"] = time.perf_counter() - t

    ext = "json" if fmt == "json" else "csv"
    files = []

    def emit(name):
        files.append(name)
        return out_dir / name

    emit("config.yaml").write_text(dump_config(cfg))
    write_json(emit("web.json"), exp.system.web.to_document())
    fs = cfg.sim.sensor_rate
    leg_names = [f"leg{i + 1}" for i in range(trials[0].shape[1])]
    for i, acc in enumerate(trials):
        times = np.arange(acc.shape[0]) / fs + exp.settled.time
        write_table(emit(f"trial_{i + 1:02d}.{ext}"), ["time_s"] + leg_names, [times] + list(acc.T), fmt)
    header, cols = ["frequency_hz"], [res.spectra[0].frequencies]
    for name, st in zip(leg_names, res.spectra):
        header += [f"{name}_mean", f"{name}_std"]
        cols += [st.mean, st.std]
    write_table(emit(f"spectra.{ext}"), header, cols, fmt)
    write_json(emit("summary.json"), summary_document(cfg, exp, res))

    manifest = {
        "config": config_to_dict(cfg),
        "seeds": trial_seeds(cfg),
        "system_hash": exp.system.content_hash(),
        "files": {name: sha256_file(out_dir / name) for name in files},
        "format": ext,
        "timings_file": "timings.txt",
    }
    write_json(out_dir / "manifest.json", manifest)
    timings["total_s"] = time.perf_counter() - t_start
    (out_dir / "timings.txt").write_text("".join(f"{k} = {v:.3f}\n" for k, v in sorted(timings.items())))
    manifest["timings"] = timings
    logger.info("run written to %s (%.1f s)", out_dir, timings["total_s"])
    return manifest


# ---------------------------------------------------------------------------
# loading run artifacts


def load_run(run_dir) -> dict:
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.json"
    if not manifest_path.exists():
        raise FileNotFoundError(f"{run_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    ext = manifest.get("format", "csv")
    spectra = read_table(run_dir / f"spectra.{ext}")
    summary = json.loads((run_dir / "summary.json").read_text())
    trials = sorted(run_dir.glob(f"trial_*.{ext}"))
    return {"dir": run_dir, "manifest": manifest, "spectra": spectra, "summary": summary, "trials": trials}


def verify_manifest(run_dir) -> list[str]:
    """Names of inventory files that are missing or whose hash does not match."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text())
    bad = []
    for name, digest in manifest["files"].items():
        p = run_dir / name
        if not p.exists() or sha256_file(p) != digest:
            bad.append(name)
    return bad


def _leg_count(spectra: dict) -> int:
    return sum(1 for k in spectra if k.endswith("_mean"))


def cmd_compare(run_a, run_b, out=None, prey_band=(5.0, 6.0)) -> dict:
    """Overlay two runs (typically empty web vs. prey) leg by leg."""
    a, b = load_run(run_a), load_run(run_b)
    fa, fb = a["spectra"]["frequency_hz"], b["spectra"]["frequency_hz"]
    if fa.shape != fb.shape or not np.array_equal(fa, fb):
        raise CompareError("the two runs have different frequency grids")
    n_legs = _leg_count(a["spectra"])
    if n_legs != _leg_count(b["spectra"]):
        raise CompareError("the two runs have different numbers of legs")
    df = float(fa[1] - fa[0])
    band = (fa >= prey_band[0]) & (fa <= prey_band[1])
    header, cols, excess = ["frequency_hz"], [fa], []
    for i in range(1, n_legs + 1):
        for tag, run in (("a", a), ("b", b)):
            header += [f"leg{i}_{tag}_mean", f"leg{i}_{tag}_std"]
            cols += [run["spectra"][f"leg{i}_mean"], run["spectra"][f"leg{i}_std"]]
        diff = b["spectra"][f"leg{i}_mean"] - a["spectra"][f"leg{i}_mean"]
        excess.append(float(np.sum(diff[band]) * df))
    da = a["summary"]["classification"]["decision"]
    db = b["summary"]["classification"]["decision"]
    doc = {
        "run_a": str(a["dir"]),
        "run_b": str(b["dir"]),
        "prey_band_hz": list(prey_band),
        "prey_band_excess": excess,
        "decision_a": da,
        "decision_b": db,
        "flipped": da != db,
        "baseline_hz_a": a["summary"]["baseline_hz"],
        "baseline_hz_b": b["summary"]["baseline_hz"],
        "prey_peak_hz_b": b["summary"]["prey_peak_hz"],
    }
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        write_table(out / "comparison.csv", header, cols)
        write_json(out / "comparison.json", doc)
    return doc


# ---------------------------------------------------------------------------
# sweeps


def sweep_config(cfg: ExperimentConfig, parameter: str, value) -> ExperimentConfig:
    from .web import PreySpec

    if parameter == "prey_ring":
        prey = cfg.prey or PreySpec()
        return cfg.replace(prey=dataclasses.replace(prey, ring_index=int(value)))
    if parameter == "prey_mass":
        prey = cfg.prey or PreySpec()
        return cfg.replace(prey=dataclasses.replace(prey, mass=float(value)))
    if parameter == "foot_ring":
        rings = {k: int(value) for k in cfg.spider.foot_rings}
        return cfg.replace(spider=dataclasses.replace(cfg.spider, foot_rings=rings))
    if parameter == "motor_rotation":
        return cfg.replace(motor=dataclasses.replace(cfg.motor, max_rotation=float(value)))
    raise ConfigError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}")


def _sweep_one(args):
    cfg, parameter, value, out_dir, fmt = args
    row = {"parameter": parameter, "value": value, "status": "ok", "baseline_hz": None, "prey_peak_hz": None,
           "decision": None, "legs_with_prey_peak": None, "note": ""}
    try:
        run_cfg = sweep_config(cfg, parameter, value)
        cmd_run(run_cfg, out_dir, jobs=1, fmt=fmt)
        summary = json.loads((Path(out_dir) / "summary.json").read_text())
        row.update(baseline_hz=summary["baseline_hz"], prey_peak_hz=summary["prey_peak_hz"],
                   decision=summary["classification"]["decision"],
                   legs_with_prey_peak=summary["classification"]["legs_with_prey_peak"])
        if all(w is None for w in summary["crouch_windows_s"]):
            row["note"] = "NoTransient"
    except Exception as exc:  # one failing run must not take the sweep down
        rec = error_record(exc)
        row.update(status="error", note=f"{rec['error']}: {rec['message']}")
    return row


def cmd_sweep(cfg: ExperimentConfig, parameter: str, values, out=None, jobs: int = 1, fmt: str = "csv") -> list[dict]:
    if parameter not in SWEEP_PARAMETERS:
        raise ConfigError(f"unknown sweep parameter {parameter!r}; choose from {SWEEP_PARAMETERS}")
    out_dir = resolve_output(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    args = [(cfg, parameter, v, out_dir / f"{parameter}_{v}", fmt) for v in values]
    if jobs <= 1 or len(args) == 1:
        rows = [_sweep_one(a) for a in args]
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_sweep_one, args))
    fields = ["parameter", "value", "status", "baseline_hz", "prey_peak_hz", "decision", "legs_with_prey_peak",
              "note"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: ("" if r[k] is None else (_fmt(r[k]) if isinstance(r[k], float) else r[k])) for k in fields})
    (out_dir / "sweep.csv").write_text(buf.getvalue())
    write_json(out_dir / "sweep.json", rows)
    return rows


def cmd_build_web(cfg: ExperimentConfig, out=None, with_robot: bool = False) -> Path:
    out_dir = resolve_output(cfg, out)
    out_dir.mkdir(parents=True, exist_ok=True)
    web = build_web(cfg.web)
    if cfg.prey is not None:
        web = attach_prey(web, cfg.prey)
    write_json(out_dir / "web.json", web.to_document())
    if with_robot:
        robot = build_spider(cfg.spider.to_spec(cfg.web))
        write_json(out_dir / "robot.json", robot.to_document())
        write_json(out_dir / "system.json", assemble(web, robot).to_document())
    return out_dir / "web.json"


def cmd_plot(run_dir, out=None) -> list[Path]:
    from .plotting import plot_comparison, plot_run

    run_dir = Path(run_dir)
    out_dir = Path(out) if out is not None else run_dir
    if (run_dir / "comparison.csv").exists():
        return plot_comparison(run_dir, out_dir)
    if not (run_dir / "manifest.json").exists():
        raise FileNotFoundError(f"{run_dir} holds neither a run nor a comparison")
    return plot_run(run_dir, out_dir)


def cmd_pose_ratios(csv_path, out=None, frame_rate: float = 100.0, likelihood_min: float = 0.95,
                    filter_cutoff: float = 60.0, max_gap: int = 5, fmt: str = "csv") -> dict:
    traces = A.read_landmark_csv(csv_path, frame_rate)
    ratios = A.pose_segment_ratios(traces, likelihood_min, filter_cutoff, max_gap)
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        if fmt == "json":
            write_json(out / "pose_ratios.json", {k: list(v) for k, v in ratios.items()})
        else:
            buf = io.StringIO()
            w = csv.writer(buf, lineterminator="\n")
            w.writerow(["leg", "C1_femur", "C2_tibia", "C3_metatarsus", "C4_tarsus"])
            for k, v in ratios.items():
                w.writerow([k] + [f"{x:.6f}" for x in v])
            (out / "pose_ratios.csv").write_text(buf.getvalue())
    return ratios


__all__ = [
    "cmd_run", "cmd_compare", "cmd_sweep", "cmd_plot", "cmd_build_web", "cmd_pose_ratios", "prepare", "run_trials",
    "analyse", "load_run", "verify_manifest", "load_config", "exit_code_for", "error_record", "OUTPUT_ENV",
]
