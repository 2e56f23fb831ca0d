"""Command-line driver.

Usage::

    lmg-monitor <subcommand> [--config FILE] [--key value ...]

Subcommands: trajectory, ensemble, lindblad, compare, sweep, flow,
oracle, ehrenfest, report.  Every run writes its CSVs plus
``manifest.json`` into ``out_dir``.

Exit codes: 0 success, 2 configuration error, 3 solver failure,
4 inconclusive run.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from . import analysis, classical_flow, runner
from .config import KEY_HELP, RunConfig, parse_config, parse_grid
from .errors import ConfigError, InconclusiveRunError, IntegrationError
from .io import read_manifest, write_csv, write_manifest, versions
from .monitored_quantum import ModelSpec, lindblad_evolve, max_stable_dt, sse_trajectory
from .noise import NOISE_ALGORITHM, NoiseStream
from .semiclassical import PhasePoint, simulate_large_gamma, simulate_trajectory
from .spin_algebra import coherent_state

log = logging.getLogger("monitored_lmg")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_INCONCLUSIVE = 0, 2, 3, 4

TOLERANCES = {
    "lindblad_trace_per_step": 1e-6,
    "flow_energy_drift": classical_flow.ENERGY_DRIFT_TOL,
    "inconclusive_unabsorbed": analysis.INCONCLUSIVE_LIMIT,
    "stationary_target_unabsorbed": 0.01,
}


class Run:
    """Collects written files and diagnostics for the manifest."""

    def __init__(self, cfg: RunConfig, subcommand: str):
        self.cfg = cfg
        self.subcommand = subcommand
        self.out = Path(cfg.out_dir)
        self.files: list[str] = []
        self.diagnostics: dict = {}
        self.extra: dict = {}

    def csv(self, name: str, columns: dict, **meta) -> None:
        base = {"subcommand": self.subcommand, "base_seed": self.cfg.base_seed}
        write_csv(self.out / name, columns, {**base, **meta})
        self.files.append(name)


DEFAULT_HORIZON = 10.0


def _grid(cfg: RunConfig) -> np.ndarray:
    n = int(round(cfg.horizon(DEFAULT_HORIZON) / cfg.dt_record))
    return np.arange(n + 1) * cfg.dt_record


def _coherent(cfg: RunConfig, model: ModelSpec) -> np.ndarray:
    return coherent_state(model.ops, cfg.theta, float(classical_flow.wrap_phi(cfg.phi)))


def _semi_initial(cfg: RunConfig) -> PhasePoint:
    return PhasePoint(cfg.initial_mz, cfg.phi)


# ---------------------------------------------------------------------------
# subcommands


def cmd_trajectory(run: Run) -> None:
    cfg = run.cfg
    noise = NoiseStream(cfg.base_seed, cfg.trajectory_index)
    meta = {"algorithm": NOISE_ALGORITHM, "trajectory_index": cfg.trajectory_index}
    if cfg.semiclassical:
        tr = simulate_trajectory(_semi_initial(cfg), cfg.h, cfg.gamma, cfg.horizon(DEFAULT_HORIZON), cfg.dt, noise,
                                 cfg.dt_record)
        t_hit = np.inf if tr.absorption_time is None else tr.absorption_time
        absorbed = np.where(tr.t >= t_hit, tr.absorbed, 0)
        run.csv("semiclassical.csv", {"t": tr.t, "mz": tr.mz, "phi": tr.phi_wrapped, "absorbed": absorbed}, **meta)
        run.diagnostics.update(absorbed=tr.absorbed_label, absorption_time=tr.absorption_time)
    else:
        model = ModelSpec(cfg.n_spins, cfg.h, cfg.gamma)
        tr = sse_trajectory(model, _coherent(cfg, model), cfg.horizon(DEFAULT_HORIZON), cfg.dt, noise,
                            cfg.dt_record, cfg.method)
        run.csv("trajectory.csv", {"t": tr.t, "mx": tr.mx, "my": tr.my, "mz": tr.mz, "mz2": tr.mz2,
                                   "norm_drift": tr.norm_drift}, method=cfg.method, **meta)
        run.diagnostics["max_norm_drift"] = float(np.max(tr.norm_drift))


def _write_summary(run: Run, summary: analysis.EnsembleSummary) -> None:
    cols = {"t": summary.t, "mean_mz": summary.mean_mz, "se_mz": summary.se_mz, "var_mz": summary.var_mz}
    if summary.mean_mx is not None:
        cols.update(mean_mx=summary.mean_mx, mean_my=summary.mean_my)
    run.csv("summary.csv", cols, M=summary.M)
    nb = summary.histogram.shape[1]
    edges = summary.bin_edges
    run.csv("histogram.csv", {
        "t": np.repeat(summary.t, nb),
        "bin_left": np.tile(edges[:-1], len(summary.t)),
        "bin_right": np.tile(edges[1:], len(summary.t)),
        "mass": summary.histogram.ravel(),
    }, bins=nb)


def cmd_ensemble(run: Run) -> None:
    cfg = run.cfg
    workers = cfg.resolved_workers()
    if cfg.semiclassical:
        t_final = cfg.horizon(analysis.default_t_final(cfg.gamma))
        ens = runner.run_semiclassical(_semi_initial(cfg), cfg.h, cfg.gamma, t_final, cfg.dt, cfg.base_seed,
                                       cfg.M, cfg.dt_record, workers)
        summary = analysis.summarize_ensemble(ens, cfg.epsilon, cfg.bins)
        _write_summary(run, summary)
        run.diagnostics.update(
            absorbed_plus=summary.absorbed_plus, absorbed_minus=summary.absorbed_minus,
            unabsorbed_fraction=summary.unabsorbed_fraction, absorption_rule="exact clamp, else 1-|mz|<epsilon",
        )
        try:
            est = analysis.p_plus(summary)
            run.diagnostics.update(p_plus=est.estimate, p_plus_err=est.stderr, p_plus_mean_based=est.mean_based)
        except InconclusiveRunError as exc:
            # the CSVs are still useful; report the run as inconclusive
            run.diagnostics.update(p_plus=None, p_plus_note=str(exc))
            run.extra["chunks"] = [{"first_index": int(c[0]), "size": len(c)} for c in runner.chunks(cfg.M)]
            raise
    else:
        model = ModelSpec(cfg.n_spins, cfg.h, cfg.gamma)
        ens = runner.run_sse(model, _coherent(cfg, model), cfg.horizon(DEFAULT_HORIZON), cfg.dt, cfg.base_seed, cfg.M,
                             cfg.dt_record, cfg.method, workers)
        summary = analysis.summarize_ensemble(ens, cfg.epsilon, cfg.bins)
        _write_summary(run, summary)
        run.diagnostics["max_norm_drift"] = float(np.max(ens.norm_drift))
    run.extra["chunks"] = [{"first_index": int(c[0]), "size": len(c)} for c in runner.chunks(cfg.M)]


def cmd_lindblad(run: Run) -> None:
    cfg = run.cfg
    model = ModelSpec(cfg.n_spins, cfg.h, cfg.gamma)
    psi = _coherent(cfg, model)
    t = _grid(cfg)
    rec = lindblad_evolve(model, np.outer(psi, psi.conj()), t, dt=min(cfg.dt, max_stable_dt(model)))
    run.csv("density.csv", {"t": rec.t, "mx": rec.mx, "my": rec.my, "mz": rec.mz, "purity": rec.purity,
                            "trace_err": rec.trace_err}, dt=rec.dt)
    run.diagnostics.update(max_trace_drift=rec.max_trace_drift, min_eigenvalue=float(np.min(rec.min_eig)), dt=rec.dt)


def cmd_compare(run: Run) -> None:
    cfg = run.cfg
    model = ModelSpec(cfg.n_spins, cfg.h, cfg.gamma)
    psi0 = _coherent(cfg, model)
    start = PhasePoint(math.cos(cfg.theta), cfg.phi)
    noise = NoiseStream(cfg.base_seed, cfg.trajectory_index)
    t_final = cfg.horizon(DEFAULT_HORIZON)
    q = sse_trajectory(model, psi0, t_final, cfg.dt, noise, cfg.dt_record, cfg.method)
    c = simulate_trajectory(start, cfg.h, cfg.gamma, t_final, cfg.dt, noise.replay(), cfg.dt_record)
    run.csv("compare_trajectory.csv", {"t": q.t, "mz_finite": q.mz, "mz_infinite": c.mz,
                                       "gap": q.mz2 - q.mz**2}, N=model.N, trajectory_index=cfg.trajectory_index)

    workers = cfg.resolved_workers()
    qe = runner.run_sse(model, psi0, t_final, cfg.dt, cfg.base_seed, cfg.M, cfg.dt_record, cfg.method, workers)
    ce = runner.run_semiclassical(start, cfg.h, cfg.gamma, t_final, cfg.dt, cfg.base_seed, cfg.M,
                                  cfg.dt_record, workers)
    qs = analysis.summarize_ensemble(qe, cfg.epsilon)
    cs = analysis.summarize_ensemble(ce, cfg.epsilon)
    run.csv("compare_means.csv", {"t": qs.t, "mz_finite": qs.mean_mz, "se_finite": qs.se_mz,
                                  "mz_infinite": cs.mean_mz, "se_infinite": cs.se_mz}, N=model.N, M=cfg.M)

    density = None
    if model.dim <= 129:
        density = lindblad_evolve(model, np.outer(psi0, psi0.conj()), qe.t, dt=min(cfg.dt, max_stable_dt(model)))
    gap = analysis.factorization_gap(qe, density)
    lind = gap.lindblad_level if gap.lindblad_level is not None else np.full(len(qe.t), np.nan)
    run.csv("compare_gap.csv", {"t": gap.t, "gap_per_trajectory": gap.per_trajectory[0],
                                "gap_trajectory_avg": gap.trajectory_averaged, "gap_ensemble": gap.ensemble_level,
                                "gap_lindblad": lind}, N=model.N, M=cfg.M)
    run.diagnostics.update(max_norm_drift=float(np.max(qe.norm_drift)),
                           late_time_mean_difference=float(qs.mean_mz[-1] - cs.mean_mz[-1]))


def cmd_sweep(run: Run) -> None:
    cfg = run.cfg
    hs = parse_grid(cfg.h_grid, "h_grid")
    gs = parse_grid(cfg.gamma_grid, "gamma_grid")
    if not hs or not gs:
        raise ConfigError("h_grid" if not hs else "gamma_grid", "grid is empty")
    sc = analysis.SweepConfig(M=cfg.M, dt=cfg.dt, base_seed=cfg.base_seed, mz0=cfg.initial_mz,
                              phi0=float(classical_flow.wrap_phi(cfg.phi)), epsilon=cfg.epsilon,
                              t_final=cfg.t_final or None, workers=cfg.resolved_workers())
    pd = analysis.phase_diagram_sweep(hs, gs, sc)
    H, G = np.meshgrid(pd.h, pd.gamma, indexing="ij")
    run.csv("phase_diagram.csv", {"h": H.ravel(), "gamma": G.ravel(), "p_plus": pd.p_plus.ravel(),
                                  "p_plus_err": pd.p_plus_err.ravel(), "unabsorbed_frac": pd.unabsorbed.ravel(),
                                  "M": np.full(H.size, cfg.M)}, algorithm=NOISE_ALGORITHM, dt=cfg.dt)
    run.extra["cells"] = [
        {"h": float(H.flat[k]), "gamma": float(G.flat[k]), "M": cfg.M, "seed_offset": int(pd.seed_offset.flat[k]),
         "t_final": float(pd.t_final.flat[k]), "inconclusive": bool(pd.inconclusive.flat[k])}
        for k in range(H.size)
    ]
    run.diagnostics.update(inconclusive_cells=int(pd.inconclusive.sum()),
                           max_unabsorbed_fraction=float(np.nanmax(pd.unabsorbed)))


def cmd_flow(run: Run) -> None:
    cfg = run.cfg
    energies = parse_grid(cfg.energies, "energies")
    starts = []
    if energies:
        for E in energies:
            try:
                starts.append(classical_flow.EnergyLevel(E, cfg.h).start_point())
            except ValueError as exc:
                raise ConfigError("energies", str(exc)) from None
    else:
        starts.append(_semi_initial(cfg))
    orbits = []
    for k, p in enumerate(starts):
        tr = classical_flow.hamiltonian_flow(p, cfg.h, cfg.horizon(DEFAULT_HORIZON), dt=cfg.dt, dt_record=cfg.dt_record)
        run.csv(f"flow_{k:03d}.csv", {"t": tr.t, "mz": tr.mz, "phi_unwrapped": tr.phi, "energy": tr.energy},
                h=cfg.h, algorithm="rk4")
        E0 = float(tr.energy[0])
        cls = classical_flow.classify_orbit(classical_flow.EnergyLevel(E0, cfg.h))
        orbits.append({"file": f"flow_{k:03d}.csv", "energy": E0, "class": cls.value,
                       "max_energy_drift": tr.max_energy_drift})
    if 0.0 < cfg.h < 1.0:
        phi, mz = classical_flow.separatrix_curve(cfg.h)
        run.csv("separatrix.csv", {"phi": phi, "mz": mz}, h=cfg.h)
    run.extra["orbits"] = orbits


def cmd_oracle(run: Run) -> None:
    cfg = run.cfg
    mz0 = cfg.initial_mz
    taus = sorted(parse_grid(cfg.taus, "taus"))
    if not taus or cfg.gamma <= 0:
        raise ConfigError("taus" if not taus else "gamma", "oracle needs gamma > 0 and at least one tau")
    rows = {k: [] for k in ("tau", "ks_distance", "mean_mz", "mean_se")}
    dens = {k: [] for k in ("tau", "s", "density_exact", "density_empirical")}
    edges = np.linspace(-8.0, 8.0, 161)
    centers = 0.5 * (edges[1:] + edges[:-1])
    for tau in taus:
        t_final = round(tau / cfg.gamma / cfg.dt) * cfg.dt
        ens = simulate_large_gamma(mz0, cfg.gamma, t_final, cfg.dt, cfg.base_seed, np.arange(cfg.M))
        final = ens.mz[:, -1]
        sol = analysis.FokkerPlanckSolution.from_mz(mz0, cfg.gamma, t_final)
        rows["tau"].append(sol.tau)
        rows["ks_distance"].append(analysis.ks_distance(final, sol))
        rows["mean_mz"].append(final.mean())
        rows["mean_se"].append(final.std(ddof=1) / math.sqrt(cfg.M))
        with np.errstate(divide="ignore"):
            hist, _ = np.histogram(np.arctanh(final), bins=edges, density=False)
        dens["tau"].extend([sol.tau] * len(centers))
        dens["s"].extend(centers)
        dens["density_exact"].extend(sol.density(centers))
        dens["density_empirical"].extend(hist / (cfg.M * np.diff(edges)))
    run.csv("oracle.csv", rows, mz0=mz0, gamma=cfg.gamma, p_plus_exact=analysis.fokker_planck_p_plus(mz0))
    run.csv("oracle_density.csv", dens, mz0=mz0, gamma=cfg.gamma)
    run.diagnostics.update(max_ks_distance=float(max(rows["ks_distance"])),
                           p_plus_exact=analysis.fokker_planck_p_plus(mz0))


def cmd_ehrenfest(run: Run) -> None:
    cfg = run.cfg
    res = analysis.ehrenfest_time(cfg.n_spins, cfg.h, cfg.gamma, threshold=cfg.ehrenfest_threshold,
                                  dt_record=cfg.dt_record, t_max=cfg.t_final or 200.0, dt=cfg.dt)
    run.csv("ehrenfest.csv", {"t": res.t, "mz": res.mz}, N=res.N, threshold=cfg.ehrenfest_threshold)
    run.diagnostics["t_star"] = res.t_star


COMMANDS = {
    "trajectory": (cmd_trajectory, "one SSE (finite N) or semiclassical trajectory"),
    "ensemble": (cmd_ensemble, "ensemble summary and m_z histograms"),
    "lindblad": (cmd_lindblad, "average-state evolution"),
    "compare": (cmd_compare, "finite N against the infinite-size limit with matched noise"),
    "sweep": (cmd_sweep, "p_plus phase diagram over (h, gamma)"),
    "flow": (cmd_flow, "unmonitored orbits and the separatrix"),
    "oracle": (cmd_oracle, "large-gamma comparison with the exact Fokker-Planck law"),
    "ehrenfest": (cmd_ehrenfest, "time at which the finite-N average state leaves m_z = -1"),
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lmg-monitor", description=__doc__.split("\n\n")[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (_, help_text) in COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="flat key=value file")
        p.add_argument("--plot", action="store_true", help="also render PNG figures from the CSVs")
        for key, text in KEY_HELP.items():
            p.add_argument(f"--{key}", dest=f"key_{key}", default=None, metavar="VALUE", help=text)
    rep = sub.add_parser("report", help="render PNG figures for an existing run directory")
    rep.add_argument("directory")
    return parser


def _report(directory: str) -> int:
    from .plotting import render_directory

    manifest_path = Path(directory) / "manifest.json"
    manifest = read_manifest(manifest_path)
    pngs = render_directory(directory, [f for f in manifest.get("files", []) if f.endswith(".csv")])
    names = [p.name for p in pngs]
    manifest["files"] = sorted(set(manifest.get("files", [])) | set(names))
    write_manifest(manifest_path, manifest)
    print(json.dumps({"status": "ok", "figures": names}))
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "report":
        return _report(args.directory)

    started = time.perf_counter()
    overrides = {k[4:]: v for k, v in vars(args).items() if k.startswith("key_") and v is not None}
    if args.plot:
        overrides["formats"] = "csv+png"
    try:
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        err = {"status": "error", "kind": "config", "key": exc.key, "message": str(exc)}
        print(json.dumps(err), file=sys.stderr)
        return EXIT_CONFIG

    run = Run(cfg, args.command)
    status, code, cause = "ok", EXIT_OK, None
    try:
        COMMANDS[args.command][0](run)
        if cfg.plot:
            from .plotting import render_directory

            run.files.extend(p.name for p in render_directory(run.out, list(run.files)))
    except ConfigError as exc:
        status, code, cause = "error", EXIT_CONFIG, {"kind": "config", "key": exc.key, "message": str(exc)}
    except InconclusiveRunError as exc:
        status, code, cause = "inconclusive", EXIT_INCONCLUSIVE, {"kind": "inconclusive", "message": str(exc),
                                                          "unabsorbed_fraction": exc.unabsorbed_fraction}
    except (IntegrationError, FloatingPointError) as exc:
        status, code, cause = "error", EXIT_SOLVER, {"kind": "solver", "message": str(exc)}
    except Exception as exc:  # still leave a manifest behind
        log.exception("unexpected failure")
        status, code, cause = "error", 1, {"kind": "internal", "message": f"{type(exc).__name__}: {exc}"}

    manifest = {
        "status": status,
        "subcommand": args.command,
        "config": cfg.to_dict(),
        "seeds": {"base_seed": cfg.base_seed, "noise_algorithm": NOISE_ALGORITHM},
        "versions": versions(),
        "tolerances": TOLERANCES,
        "diagnostics": run.diagnostics,
        "wall_clock_s": time.perf_counter() - started,
        "files": run.files,
        **run.extra,
    }
    if cause is not None:
        manifest["cause"] = cause
        print(json.dumps({"status": status, **cause}), file=sys.stderr)
    write_manifest(run.out / "manifest.json", manifest)
    return code


if __name__ == "__main__":
    sys.exit(main())
