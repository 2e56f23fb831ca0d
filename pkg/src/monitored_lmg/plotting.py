"""PNG figures rendered from emitted CSV files only.

Each renderer takes a CSV path and writes a sibling ``.png``.  Nothing here
touches solver state, so a run directory can be re-plotted later.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .io import read_csv  # noqa: E402


def _save(fig, csv_path: Path) -> Path:
    out = Path(csv_path).with_suffix(".png")
    fig.tight_layout()
    fig.savefig(out, dpi=120)
    plt.close(fig)
    return out


def _lines(csv_path: Path, x: str, ys: list[str], title: str, ylabel: str = "") -> Path:
    cols, _ = read_csv(csv_path)
    fig, ax = plt.subplots(figsize=(6, 4))
    for y in ys:
        if y in cols:
            ax.plot(cols[x], cols[y], label=y, lw=1.2)
    ax.set_xlabel(x)
    ax.set_ylabel(ylabel)
    ax.set_title(title)
    ax.legend(fontsize=8)
    return _save(fig, csv_path)


def plot_histogram(csv_path: Path) -> Path:
    cols, _ = read_csv(csv_path)
    t = np.unique(cols["t"])
    left = np.unique(cols["bin_left"])
    right = np.unique(cols["bin_right"])
    mass = cols["mass"].reshape(len(t), len(left))
    fig, ax = plt.subplots(figsize=(6, 4))
    centers = 0.5 * (left + right)
    mesh = ax.pcolormesh(t, centers, np.log10(mass.T + 1e-6), shading="nearest", cmap="viridis")
    fig.colorbar(mesh, ax=ax, label="log10 mass")
    ax.set_xlabel("t")
    ax.set_ylabel("m_z")
    ax.set_title("distribution of m_z")
    return _save(fig, csv_path)


def plot_phase_diagram(csv_path: Path) -> Path:
    cols, _ = read_csv(csv_path)
    h = np.unique(cols["h"])
    g = np.unique(cols["gamma"])
    p = np.full((len(g), len(h)), np.nan)
    for hi, gi, pi in zip(cols["h"], cols["gamma"], cols["p_plus"]):
        p[np.searchsorted(g, gi), np.searchsorted(h, hi)] = pi
    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    mesh = ax.pcolormesh(h, g, p, shading="nearest", cmap="magma", vmin=0, vmax=1)
    fig.colorbar(mesh, ax=ax, label="p_plus")
    hh = np.linspace(0, 1, 200)
    ax.plot(hh, 2 * np.sqrt(hh * (1 - hh)), "w-", lw=1.5, label="2 sqrt(h(1-h))")
    ax.set_xlim(h.min(), h.max())
    ax.set_ylim(g.min(), g.max())
    ax.set_xlabel("h")
    ax.set_ylabel("gamma")
    ax.legend(loc="upper right", fontsize=8)
    return _save(fig, csv_path)


def plot_flow(csv_paths: list[Path], separatrix: Path | None, out: Path) -> Path:
    fig, ax = plt.subplots(figsize=(6, 4))
    for path in csv_paths:
        cols, _ = read_csv(path)
        phi = (cols["phi_unwrapped"] + np.pi) % (2 * np.pi) - np.pi
        ax.plot(phi, cols["mz"], ",", ms=1)
    if separatrix is not None:
        cols, _ = read_csv(separatrix)
        ax.plot(cols["phi"], cols["mz"], "r.", ms=1.5, label="separatrix")
        ax.legend(fontsize=8)
    ax.set_xlabel("phi")
    ax.set_ylabel("m_z")
    ax.set_xlim(-np.pi, np.pi)
    ax.set_ylim(-1, 1)
    return _save(fig, out)


# column sets recognised by render_directory
_LINE_PLOTS = {
    "trajectory.csv": ("t", ["mx", "my", "mz"], "SSE trajectory"),
    "semiclassical.csv": ("t", ["mz"], "semiclassical trajectory"),
    "density.csv": ("t", ["mx", "my", "mz", "purity"], "average state"),
    "summary.csv": ("t", ["mean_mz"], "ensemble mean"),
    "compare_trajectory.csv": ("t", ["mz_finite", "mz_infinite"], "matched-noise trajectories"),
    "compare_means.csv": ("t", ["mz_finite", "mz_infinite"], "ensemble means"),
    "compare_gap.csv": ("t", ["gap_per_trajectory", "gap_trajectory_avg", "gap_lindblad"], "factorization gap"),
    "oracle.csv": ("tau", ["ks_distance", "mean_mz"], "large-gamma oracle"),
    "ehrenfest.csv": ("t", ["mz"], "average-state m_z"),
}


def render_directory(out_dir: str | Path, files: list[str]) -> list[Path]:
    """Render every recognised CSV among ``files`` (names relative to ``out_dir``)."""
    out_dir = Path(out_dir)
    written = []
    flows = sorted(out_dir / f for f in files if f.startswith("flow_") and f.endswith(".csv"))
    for name in files:
        path = out_dir / name
        if name in _LINE_PLOTS:
            x, ys, title = _LINE_PLOTS[name]
            written.append(_lines(path, x, ys, title))
        elif name == "histogram.csv":
            written.append(plot_histogram(path))
        elif name == "phase_diagram.csv":
            written.append(plot_phase_diagram(path))
    if flows:
        sep = out_dir / "separatrix.csv" if "separatrix.csv" in files else None
        written.append(plot_flow(flows, sep, out_dir / "flow.csv"))
    return written
