"""SVG figures for run and comparison directories (matplotlib, Agg backend)."""

from __future__ import annotations

import logging
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

logger = logging.getLogger(__name__)

# Fixed metadata keeps the SVG bytes stable between reruns.
_SVG_META = {"Date": None, "Creator": None}


def _grid(n_panels: int = 8):
    fig, axes = plt.subplots(4, 2, figsize=(10, 10), sharex=True)
    return fig, axes.ravel()[:n_panels]


def _save(fig, path: Path) -> Path:
    plt.rcParams["svg.hashsalt"] = "crouchsim"
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata=_SVG_META)
    plt.close(fig)
    return path


def plot_traces(table: dict, path: Path, title: str = "") -> Path:
    t = table["time_s"]
    legs = sorted((k for k in table if k.startswith("leg")), key=lambda k: int(k[3:]))
    fig, axes = _grid(len(legs))
    for ax, name in zip(axes, legs):
        ax.plot(t, table[name], lw=0.6)
        ax.set_title(name)
        ax.set_ylabel("accel (m/s$^2$)")
    for ax in axes[-2:]:
        ax.set_xlabel("time (s)")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_spectra(spectra: dict, path: Path, n_trials: int, band=(0.0, 25.0), title: str = "") -> Path:
    f = spectra["frequency_hz"]
    keep = (f >= band[0]) & (f <= band[1])
    n_legs = sum(1 for k in spectra if k.endswith("_mean"))
    fig, axes = _grid(n_legs)
    for i, ax in enumerate(axes, start=1):
        mean = spectra[f"leg{i}_mean"][keep]
        std = np.nan_to_num(spectra[f"leg{i}_std"][keep])
        ax.plot(f[keep], mean, lw=0.8)
        ax.fill_between(f[keep], mean - std, mean + std, alpha=0.3, lw=0)
        ax.set_title(f"leg{i}")
        ax.set_ylabel("amplitude")
        if n_trials == 1:
            ax.text(0.98, 0.9, "n = 1 (no spread)", transform=ax.transAxes, ha="right", fontsize=7)
    for ax in axes[-2:]:
        ax.set_xlabel("frequency (Hz)")
    if title:
        fig.suptitle(title)
    return _save(fig, path)


def plot_run(run_dir, out_dir) -> list[Path]:
    from .harness import load_run, read_table

    run = load_run(run_dir)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    if run["trials"]:
        paths.append(plot_traces(read_table(run["trials"][0]), out_dir / "traces.svg", "trial 1"))
    n = run["summary"]["n_trials"]
    paths.append(plot_spectra(run["spectra"], out_dir / "spectra.svg", n, title=f"mean ± 1 s.d. over {n} trials"))
    return paths


def plot_comparison(cmp_dir, out_dir) -> list[Path]:
    from .harness import read_table

    table = read_table(Path(cmp_dir) / "comparison.csv")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    f = table["frequency_hz"]
    keep = f <= 25.0
    n_legs = sum(1 for k in table if k.endswith("_a_mean"))
    fig, axes = _grid(n_legs)
    for i, ax in enumerate(axes, start=1):
        for tag, label in (("a", "run A"), ("b", "run B")):
            mean = table[f"leg{i}_{tag}_mean"][keep]
            std = np.nan_to_num(table[f"leg{i}_{tag}_std"][keep])
            ax.plot(f[keep], mean, lw=0.8, label=label)
            ax.fill_between(f[keep], mean - std, mean + std, alpha=0.25, lw=0)
        ax.set_title(f"leg{i}")
    axes[0].legend(fontsize=7)
    for ax in axes[-2:]:
        ax.set_xlabel("frequency (Hz)")
    return [_save(fig, out_dir / "comparison.svg")]
