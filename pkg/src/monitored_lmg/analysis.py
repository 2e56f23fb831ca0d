"""Ensemble statistics and order-parameter estimates.

Absorption is classified with a two-level rule: a trajectory that hit a
wall exactly is absorbed there; an unabsorbed trajectory whose final
|m_z| is within ``epsilon`` of 1 is counted with that wall as well.
Anything else is reported as unabsorbed and never imputed.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import ndtr

from .errors import InconclusiveRunError
from .semiclassical import CylindricalRunner, PhasePoint

N_BINS = 201
BIN_EDGES = np.linspace(-1.0, 1.0, N_BINS + 1)
DEFAULT_EPSILON = 1e-4
INCONCLUSIVE_LIMIT = 0.05


# ---------------------------------------------------------------------------
# ensemble summaries


def classify_absorption(status: np.ndarray | None, final_mz: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> np.ndarray:
    """Per-trajectory label +1/-1/0 using the two-level rule."""
    final_mz = np.asarray(final_mz, dtype=float)
    label = np.zeros(final_mz.shape, dtype=np.int64) if status is None else np.asarray(status, dtype=np.int64).copy()
    free = label == 0
    label[free & (1.0 - final_mz < epsilon)] = 1
    label[free & (1.0 + final_mz < epsilon)] = -1
    return label


@dataclass
class EnsembleSummary:
    t: np.ndarray
    mean_mz: np.ndarray
    var_mz: np.ndarray
    se_mz: np.ndarray
    histogram: np.ndarray  # (len(t), N_BINS) masses
    absorbed_plus: int
    absorbed_minus: int
    unabsorbed: int
    M: int
    final_mz: np.ndarray = field(repr=False)
    epsilon: float = DEFAULT_EPSILON
    mean_mx: np.ndarray | None = None
    mean_my: np.ndarray | None = None
    bin_edges: np.ndarray = field(default_factory=lambda: BIN_EDGES.copy(), repr=False)

    @property
    def unabsorbed_fraction(self) -> float:
        return self.unabsorbed / self.M


def _order_rows(indices, *arrays):
    if indices is None:
        return arrays
    order = np.argsort(np.asarray(indices), kind="stable")
    return tuple(None if a is None else np.asarray(a)[order] for a in arrays)


def summarize_arrays(
    t: np.ndarray,
    mz: np.ndarray,
    status: np.ndarray | None = None,
    indices: np.ndarray | None = None,
    mx: np.ndarray | None = None,
    my: np.ndarray | None = None,
    epsilon: float = DEFAULT_EPSILON,
    n_bins: int = N_BINS,
) -> EnsembleSummary:
    """Summary of an (M, T) block of m_z samples on a shared grid.

    Rows are reordered by trajectory index before any reduction so the
    floating-point sums do not depend on how the block was assembled.
    """
    mz = np.atleast_2d(np.asarray(mz, dtype=float))
    M, T = mz.shape
    if M == 0:
        raise ValueError("empty ensemble")
    if len(t) != T:
        raise ValueError(f"time grid has {len(t)} points but samples have {T} columns")
    mz, status, mx, my = _order_rows(indices, mz, status, mx, my)
    mean = mz.sum(axis=0) / M
    mean += (mz - mean).sum(axis=0) / M  # one correction pass removes the rounding of sum / M
    var = ((mz - mean) ** 2).sum(axis=0) / (M - 1) if M > 1 else np.zeros(T)
    # jackknife over trajectories reduces to s / sqrt(M) for a plain mean
    se = np.sqrt(var / M)
    edges = BIN_EDGES if n_bins == N_BINS else np.linspace(-1.0, 1.0, n_bins + 1)
    hist = np.empty((T, n_bins))
    for j in range(T):
        counts, _ = np.histogram(np.clip(mz[:, j], -1.0, 1.0), bins=edges)
        hist[j] = counts / M
    label = classify_absorption(status, mz[:, -1], epsilon)
    return EnsembleSummary(
        t=np.asarray(t, dtype=float),
        mean_mz=mean,
        var_mz=var,
        se_mz=se,
        histogram=hist,
        absorbed_plus=int((label == 1).sum()),
        absorbed_minus=int((label == -1).sum()),
        unabsorbed=int((label == 0).sum()),
        M=M,
        final_mz=mz[:, -1].copy(),
        epsilon=epsilon,
        mean_mx=None if mx is None else np.asarray(mx).sum(axis=0) / M,
        mean_my=None if my is None else np.asarray(my).sum(axis=0) / M,
        bin_edges=edges.copy(),
    )


def summarize_ensemble(trajectories, epsilon: float = DEFAULT_EPSILON, n_bins: int = N_BINS) -> EnsembleSummary:
    """Summarize a batched ensemble object or a sequence of single trajectories.

    Accepts anything with ``t`` and ``mz`` arrays; absorption status is
    taken from ``status``/``absorbed`` when present.
    """
    if isinstance(trajectories, Sequence) and not hasattr(trajectories, "mz"):
        if not trajectories:
            raise ValueError("empty ensemble")
        t = np.asarray(trajectories[0].t)
        for tr in trajectories[1:]:
            if len(tr.t) != len(t) or not np.array_equal(tr.t, t):
                raise ValueError("trajectories do not share a common time grid")
        mz = np.stack([tr.mz for tr in trajectories])
        status = np.array([getattr(tr, "absorbed", 0) for tr in trajectories])
        indices = np.array([getattr(tr, "trajectory_index", i) for i, tr in enumerate(trajectories)])
        has_mx = all(hasattr(tr, "mx") for tr in trajectories)
        mx = np.stack([tr.mx for tr in trajectories]) if has_mx else None
        my = np.stack([tr.my for tr in trajectories]) if has_mx else None
        return summarize_arrays(t, mz, status, indices, mx, my, epsilon, n_bins)
    ens = trajectories
    return summarize_arrays(
        ens.t, ens.mz, getattr(ens, "status", None), getattr(ens, "indices", None),
        getattr(ens, "mx", None), getattr(ens, "my", None), epsilon, n_bins,
    )


# ---------------------------------------------------------------------------
# order parameter


@dataclass(frozen=True)
class PPlusEstimate:
    """Count-based p_plus among absorbed runs, with the mean-based estimate alongside."""

    estimate: float
    stderr: float
    mean_based: float
    mean_based_err: float
    n_plus: int
    n_minus: int
    unabsorbed_fraction: float
    M: int

    @property
    def n_absorbed(self) -> int:
        return self.n_plus + self.n_minus

    def wilson_interval(self, confidence: float = 0.95) -> tuple[float, float]:
        ci = stats.binomtest(self.n_plus, self.n_absorbed).proportion_ci(confidence_level=confidence, method="wilson")
        return float(ci.low), float(ci.high)


def p_plus(summary: EnsembleSummary, max_unabsorbed: float = INCONCLUSIVE_LIMIT) -> PPlusEstimate:
    """Probability of ending at m_z = +1.

    Raises
    ------
    InconclusiveRunError
        If the unabsorbed fraction is not below ``max_unabsorbed``.
    """
    frac = summary.unabsorbed_fraction
    n_abs = summary.absorbed_plus + summary.absorbed_minus
    if frac >= max_unabsorbed or n_abs == 0:
        raise InconclusiveRunError(frac, max_unabsorbed)
    p = summary.absorbed_plus / n_abs
    mean_final = float(summary.mean_mz[-1])
    return PPlusEstimate(
        estimate=p,
        stderr=math.sqrt(p * (1.0 - p) / n_abs),
        mean_based=0.5 * (1.0 + mean_final),
        mean_based_err=0.5 * float(summary.se_mz[-1]),
        n_plus=summary.absorbed_plus,
        n_minus=summary.absorbed_minus,
        unabsorbed_fraction=frac,
        M=summary.M,
    )


def gamma_critical(h: float, with_flag: bool = False):
    """Critical measurement rate 2 sqrt(h (1 - h)); 0 outside [0, 1].

    With ``with_flag`` a pair (value, in_range) is returned.
    """
    in_range = 0.0 <= h <= 1.0
    value = 2.0 * math.sqrt(h * (1.0 - h)) if in_range else 0.0
    return (value, in_range) if with_flag else value


def default_t_final(gamma: float) -> float:
    return max(50.0, 20.0 / gamma) if gamma > 0 else 50.0


@dataclass(frozen=True)
class StationaryRun:
    estimate: PPlusEstimate | None
    t_final: float
    unabsorbed_fraction: float
    summary: EnsembleSummary


def stationary_p_plus(
    initial: PhasePoint,
    h: float,
    gamma: float,
    dt: float,
    base_seed: int,
    indices,
    t_final: float | None = None,
    epsilon: float = DEFAULT_EPSILON,
    target_unabsorbed: float = 0.01,
    max_doublings: int = 4,
) -> StationaryRun:
    """Run to ``t_final`` and keep doubling it until fewer than 1% are unabsorbed.

    The ensemble is continued, not restarted, so the result equals a
    single run to the final horizon.  ``estimate`` is None when the run
    stays inconclusive (>= 5% unabsorbed) after the last doubling.
    """
    t_end = default_t_final(gamma) if t_final is None else float(t_final)
    t_end = math.ceil(t_end / dt - 1e-9) * dt
    runner = CylindricalRunner(initial, h, gamma, dt, base_seed, indices)
    for attempt in range(max_doublings + 1):
        runner.advance_to(t_end)
        summary = summarize_arrays(np.array([t_end]), runner.mz[:, None], runner.status, runner.indices,
                                   epsilon=epsilon)
        if summary.unabsorbed_fraction < target_unabsorbed or attempt == max_doublings:
            break
        t_end *= 2.0
    try:
        est = p_plus(summary)
    except InconclusiveRunError:
        est = None
    return StationaryRun(est, t_end, summary.unabsorbed_fraction, summary)


# ---------------------------------------------------------------------------
# phase diagram


@dataclass(frozen=True)
class SweepConfig:
    M: int = 2000
    dt: float = 5e-3
    base_seed: int = 0
    mz0: float = 0.0
    phi0: float = 0.0
    epsilon: float = DEFAULT_EPSILON
    t_final: float | None = None
    workers: int = 1


@dataclass
class PhaseDiagram:
    h: np.ndarray
    gamma: np.ndarray
    p_plus: np.ndarray  # (len(h), len(gamma)); NaN where inconclusive
    p_plus_err: np.ndarray
    unabsorbed: np.ndarray
    t_final: np.ndarray
    seed_offset: np.ndarray
    config: SweepConfig

    @property
    def inconclusive(self) -> np.ndarray:
        return np.isnan(self.p_plus)


def _run_cell(args):
    h, gamma, offset, cfg = args
    run = stationary_p_plus(PhasePoint(cfg.mz0, cfg.phi0), h, gamma, cfg.dt, cfg.base_seed,
                            np.arange(offset, offset + cfg.M), t_final=cfg.t_final, epsilon=cfg.epsilon)
    if run.estimate is None:
        return math.nan, math.nan, run.unabsorbed_fraction, run.t_final
    return run.estimate.estimate, run.estimate.stderr, run.unabsorbed_fraction, run.t_final


def phase_diagram_sweep(h_grid, gamma_grid, config: SweepConfig = SweepConfig()) -> PhaseDiagram:
    """p_plus on an (h, gamma) grid.

    Cell (i, j) uses trajectory indices starting at (i * n_gamma + j) * M,
    so every cell has its own noise and the matrix does not depend on the
    worker count.
    """
    h_grid = np.asarray(h_grid, dtype=float)
    gamma_grid = np.asarray(gamma_grid, dtype=float)
    if h_grid.size == 0 or gamma_grid.size == 0:
        raise ValueError("empty grid")
    shape = (h_grid.size, gamma_grid.size)
    offsets = (np.arange(h_grid.size * gamma_grid.size) * config.M).reshape(shape)
    jobs = [(float(h), float(g), int(offsets[i, j]), config)
            for i, h in enumerate(h_grid) for j, g in enumerate(gamma_grid)]
    if config.workers > 1:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(_run_cell, jobs))
    else:
        results = [_run_cell(job) for job in jobs]
    res = np.array(results, dtype=float).reshape(shape + (4,))
    return PhaseDiagram(h=h_grid, gamma=gamma_grid, p_plus=res[..., 0], p_plus_err=res[..., 1],
                        unabsorbed=res[..., 2], t_final=res[..., 3], seed_offset=offsets, config=config)


@dataclass(frozen=True)
class CriticalEstimate:
    h: float
    gamma_c: float | None
    resolution: float | None
    scanned: tuple[tuple[float, float, float], ...]  # (gamma, p_plus, wilson lower bound)


def gamma_c_scan(
    h: float,
    gammas,
    config: SweepConfig = SweepConfig(),
    threshold: float = 0.05,
    confidence: float = 0.95,
    stop_early: bool = True,
) -> CriticalEstimate:
    """First gamma on an ascending grid where p_plus exceeds ``threshold`` with the given confidence.

    Uses the lower end of the one-sided Wilson interval.  ``resolution`` is the
    spacing to the previous grid point.
    """
    gammas = np.sort(np.asarray(gammas, dtype=float))
    scanned = []
    found, resolution = None, None
    init = PhasePoint(config.mz0, config.phi0)
    for j, g in enumerate(gammas):
        offset = j * config.M
        run = stationary_p_plus(init, h, g, config.dt, config.base_seed, np.arange(offset, offset + config.M),
                                t_final=config.t_final, epsilon=config.epsilon)
        if run.estimate is None:
            scanned.append((float(g), math.nan, math.nan))
            continue
        lo, _ = run.estimate.wilson_interval(1.0 - 2.0 * (1.0 - confidence))
        scanned.append((float(g), run.estimate.estimate, lo))
        if found is None and lo > threshold:
            found = float(g)
            resolution = float(g - gammas[j - 1]) if j > 0 else None
            if stop_early:
                break
    return CriticalEstimate(h=float(h), gamma_c=found, resolution=resolution, scanned=tuple(scanned))


# ---------------------------------------------------------------------------
# time-series diagnostics


def crossing_time(t: np.ndarray, reference: np.ndarray, candidate: np.ndarray, threshold: float) -> float | None:
    """First time ``candidate`` crosses ``threshold``, linearly interpolated.

    ``reference`` is only checked for a matching grid.  A candidate that
    starts exactly on the threshold counts as crossing when it leaves it.
    """
    t = np.asarray(t, dtype=float)
    reference = np.asarray(reference, dtype=float)
    candidate = np.asarray(candidate, dtype=float)
    if not (len(t) == len(reference) == len(candidate)):
        raise ValueError("reference and candidate must share the time grid")
    d = candidate - threshold
    side = np.sign(d)
    nz = np.flatnonzero(side)
    if nz.size == 0:
        return None
    first = side[nz[0]]
    after = np.flatnonzero(side[nz[0]:] == -first)
    if after.size == 0:
        return None
    k = nz[0] + after[0]
    # last point on the starting side before k
    j = k - 1
    while side[j] == 0:
        j -= 1
    return float(t[j] + (t[k] - t[j]) * d[j] / (d[j] - d[k]))


@dataclass(frozen=True)
class FactorizationGap:
    t: np.ndarray
    per_trajectory: np.ndarray  # (M, T): <m_z^2> - <m_z>^2 for each trajectory
    trajectory_averaged: np.ndarray  # mean over trajectories of the above
    ensemble_level: np.ndarray  # E[<m_z^2>] - E[<m_z>]^2 over the ensemble
    lindblad_level: np.ndarray | None = None

    @property
    def max_per_trajectory(self) -> np.ndarray:
        return self.per_trajectory.max(axis=1)


def factorization_gap(record, density=None) -> FactorizationGap:
    """Trajectory-level and ensemble-level factorization diagnostics.

    ``record`` is anything with ``t``, ``mz`` and ``mz2`` (one trajectory or
    an ensemble block).  ``density`` optionally supplies the average-state
    moments on the same grid.
    """
    mz = np.atleast_2d(np.asarray(record.mz, dtype=float))
    mz2 = np.atleast_2d(np.asarray(record.mz2, dtype=float))
    per = mz2 - mz**2
    ens = mz2.mean(axis=0) - mz.mean(axis=0) ** 2
    lind = None
    if density is not None:
        if len(density.t) != len(record.t):
            raise ValueError("density record is on a different grid")
        lind = np.asarray(density.mz2) - np.asarray(density.mz) ** 2
    return FactorizationGap(t=np.asarray(record.t), per_trajectory=per, trajectory_averaged=per.mean(axis=0),
                            ensemble_level=ens, lindblad_level=lind)


# ---------------------------------------------------------------------------
# large-gamma Fokker-Planck oracle


@dataclass(frozen=True)
class FokkerPlanckSolution:
    """Exact law of s = artanh(m_z) for dm_z = sqrt(gamma)(1 - m_z^2) dxi at rescaled time tau = gamma t.

    Two Gaussians of variance tau drifting to -+tau, weighted
    e^{-+s0} / (2 cosh s0).
    """

    s0: float
    tau: float

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")

    @classmethod
    def from_mz(cls, mz0: float, gamma: float, t: float) -> FokkerPlanckSolution:
        if not -1.0 < mz0 < 1.0:
            raise ValueError("mz0 must lie strictly inside (-1, 1)")
        return cls(float(np.arctanh(mz0)), gamma * t)

    def _weights(self):
        # e^{-+s0} / (2 cosh s0) computed without overflow
        w_minus = 1.0 / (1.0 + math.exp(2.0 * self.s0)) if self.s0 < 350 else 0.0
        return w_minus, 1.0 - w_minus

    def density(self, s):
        s = np.asarray(s, dtype=float)
        w_minus, w_plus = self._weights()
        sd = math.sqrt(self.tau)
        return (w_minus * stats.norm.pdf(s, self.s0 - self.tau, sd)
                + w_plus * stats.norm.pdf(s, self.s0 + self.tau, sd))

    def cdf(self, s):
        s = np.asarray(s, dtype=float)
        w_minus, w_plus = self._weights()
        sd = math.sqrt(self.tau)
        return w_minus * ndtr((s - self.s0 + self.tau) / sd) + w_plus * ndtr((s - self.s0 - self.tau) / sd)


def fokker_planck_density(sol: FokkerPlanckSolution, s):
    return sol.density(s)


def fokker_planck_p_plus(mz0: float) -> float:
    if not -1.0 < mz0 < 1.0:
        raise ValueError(f"mz0 must lie strictly inside (-1, 1), got {mz0}")
    return 0.5 * (1.0 + mz0)


def ks_distance(mz_samples: np.ndarray, sol: FokkerPlanckSolution) -> float:
    """Kolmogorov-Smirnov distance between artanh of the samples and the exact law."""
    with np.errstate(divide="ignore"):
        s = np.arctanh(np.asarray(mz_samples, dtype=float))
    return float(stats.kstest(s, sol.cdf).statistic)


# ---------------------------------------------------------------------------
# Ehrenfest time


@dataclass(frozen=True)
class EhrenfestResult:
    N: int
    t_star: float | None
    t: np.ndarray
    mz: np.ndarray


def ehrenfest_time(
    N: int,
    h: float,
    gamma: float,
    threshold: float = -0.9,
    dt_record: float = 0.05,
    chunk: float = 2.0,
    t_max: float = 200.0,
    dt: float | None = None,
) -> EhrenfestResult:
    """Time at which the average-state m_z, started at the south pole, first crosses ``threshold``.

    In the infinite-size limit m_z = -1 is a fixed point, so the crossing
    marks where the finite-size mean departs from it.  The master equation
    is integrated in chunks and stops at the first chunk containing the
    crossing.
    """
    from .monitored_quantum import ModelSpec, lindblad_evolve
    from .spin_algebra import coherent_state

    model = ModelSpec(N, h, gamma)
    psi = coherent_state(model.ops, math.pi, 0.0)
    rho = np.outer(psi, psi.conj())
    n_chunk = max(1, int(round(chunk / dt_record)))
    ts, mzs = [0.0], [float(np.real(np.diag(rho)) @ model.x_diag / model.S)]
    t0 = 0.0
    while t0 < t_max:
        grid = t0 + dt_record * np.arange(n_chunk + 1)
        rec = lindblad_evolve(model, rho, grid, dt=dt, store_states=True)
        rho = rec.states[-1]
        ts.extend(grid[1:])
        mzs.extend(rec.mz[1:])
        t0 = float(grid[-1])
        t_arr, mz_arr = np.array(ts), np.array(mzs)
        hit = crossing_time(t_arr, np.full_like(t_arr, -1.0), mz_arr, threshold)
        if hit is not None:
            return EhrenfestResult(N, hit, t_arr, mz_arr)
    return EhrenfestResult(N, None, np.array(ts), np.array(mzs))
