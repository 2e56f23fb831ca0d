"""Exact finite-N monitored dynamics of the LMG model.

Three routes to the same physics:

* the homodyne stochastic Schrodinger equation (single trajectories and
  batched ensembles),
* the Lindblad master equation for the trajectory-averaged state,
* the discrete ancilla (two-outcome Kraus) model whose small-step limit
  is the stochastic equation.

The monitored operator is always X = S_z, which is diagonal in the Dicke
basis; the measurement part of every update is therefore an elementwise
product.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import IntegrationError, LindbladStepError
from .noise import NOISE_ALGORITHM, OUTCOME_ALGORITHM, BlockNoise, NoiseStream, outcome_generator
from .spin_algebra import CollectiveSpinOps, build_collective_operators

logger = logging.getLogger(__name__)

SSE_METHODS = ("split", "euler")


@dataclass(frozen=True)
class ModelSpec:
    """LMG Hamiltonian H = -S_x^2/S - 2h S_z with S_z monitored at rate gamma."""

    N: int
    h: float
    gamma: float
    ops: CollectiveSpinOps = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not np.isfinite(self.h):
            raise ValueError("h must be finite")
        if not np.isfinite(self.gamma) or self.gamma < 0:
            raise ValueError(f"gamma must be finite and >= 0, got {self.gamma}")
        object.__setattr__(self, "ops", build_collective_operators(self.N))

    @property
    def S(self) -> float:
        return self.ops.S

    @property
    def dim(self) -> int:
        return self.ops.dim

    @cached_property
    def H(self) -> np.ndarray:
        ops = self.ops
        H = -(ops.sx @ ops.sx) / ops.S - 2.0 * self.h * ops.sz
        H = 0.5 * (H + H.conj().T)
        H.setflags(write=False)
        return H

    @property
    def X(self) -> np.ndarray:
        return self.ops.sz

    @property
    def x_diag(self) -> np.ndarray:
        """Eigenvalues of the monitored operator in basis order."""
        return self.ops.m_values

    @cached_property
    def _eig(self):
        return np.linalg.eigh(self.H)

    @cached_property
    def _splus(self) -> np.ndarray:
        # <m+1|S_+|m>, the superdiagonal of S_+ = S_x + i S_y
        return np.real(np.diag(self.ops.sx, k=1) * 2.0)

    def propagator(self, dt: float) -> np.ndarray:
        """exp(-i H dt) from the cached eigendecomposition."""
        w, v = self._eig
        return (v * np.exp(-1j * w * dt)) @ v.conj().T

    def energy_spread(self) -> float:
        w, _ = self._eig
        return float(w[-1] - w[0])


# ---------------------------------------------------------------------------
# stochastic Schrodinger equation


@dataclass
class TrajectoryRecord:
    t: np.ndarray
    mx: np.ndarray
    my: np.ndarray
    mz: np.ndarray
    mz2: np.ndarray
    norm_drift: np.ndarray
    trajectory_index: int = 0
    final_state: np.ndarray | None = None
    base_seed: int | None = None
    algorithm: str = NOISE_ALGORITHM
    measurement_record: np.ndarray | None = None

    @property
    def factorization_gap(self) -> np.ndarray:
        return self.mz2 - self.mz**2


@dataclass
class SSEEnsemble:
    """Batched SSE run; observable arrays have shape (M, len(t))."""

    t: np.ndarray
    indices: np.ndarray
    mx: np.ndarray
    my: np.ndarray
    mz: np.ndarray
    mz2: np.ndarray
    norm_drift: np.ndarray
    base_seed: int
    final_states: np.ndarray | None = None

    def record(self, row: int) -> TrajectoryRecord:
        return TrajectoryRecord(
            t=self.t,
            mx=self.mx[row],
            my=self.my[row],
            mz=self.mz[row],
            mz2=self.mz2[row],
            norm_drift=self.norm_drift[row],
            trajectory_index=int(self.indices[row]),
            final_state=None if self.final_states is None else self.final_states[row],
            base_seed=self.base_seed,
        )


def _observables(psi: np.ndarray, model: ModelSpec):
    """(mx, my, mz, mz2) for a batch of normalized states of shape (M, d)."""
    S = model.S
    x = model.x_diag
    p = psi.real**2 + psi.imag**2
    mz = p @ x / S
    mz2 = p @ (x * x) / S**2
    jplus = np.sum(psi[:, :-1].conj() * model._splus * psi[:, 1:], axis=1)
    return jplus.real / S, jplus.imag / S, mz, mz2


def _measurement_factor(psi: np.ndarray, x: np.ndarray, gamma: float, dt: float, dxi: np.ndarray):
    """Real diagonal multiplier 1 - gamma/2 (X-<X>)^2 dt + sqrt(gamma) (X-<X>) dxi."""
    p = psi.real**2 + psi.imag**2
    xbar = p @ x
    dev = x[None, :] - xbar[:, None]
    return 1.0 - 0.5 * gamma * dt * dev * dev + np.sqrt(gamma) * dev * dxi[:, None]


def _batch_step(psi, model: ModelSpec, U, dt, dxi, method):
    """One step for a batch; returns (new normalized states, norm drift)."""
    # overflow is caught by the finiteness check below
    with np.errstate(invalid="ignore", over="ignore"):
        factor = _measurement_factor(psi, model.x_diag, model.gamma, dt, dxi)
        if method == "split":
            new = (psi * factor) @ U.T
        else:
            # plain Euler-Maruyama on the full right-hand side
            new = psi * factor - 1j * dt * (psi @ model.H.T)
        norm = np.sqrt(np.sum(new.real**2 + new.imag**2, axis=1))
    if not np.all(np.isfinite(norm)) or np.any(norm == 0.0):
        raise IntegrationError("non-finite amplitudes in SSE step; reduce dt")
    return new / norm[:, None], norm - 1.0


def sse_step(
    state: np.ndarray, model: ModelSpec, dt: float, dxi: float, method: str = "split"
) -> tuple[np.ndarray, float]:
    """Advance a pure state by one step of the homodyne SSE.

    ``method="euler"`` applies Euler-Maruyama to the full right-hand side
    ``(-iH + gamma v) dt + sqrt(gamma) u dxi``.  ``method="split"`` (default)
    applies the same Euler-Maruyama measurement increment followed by the
    exact unitary exp(-iH dt); it agrees with "euler" to O(dt dxi) but
    does not inflate high-energy components the way (1 - iH dt) does.

    Returns the renormalized state and the pre-renormalization norm
    deviation ``||psi'|| - 1``.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if method not in SSE_METHODS:
        raise ValueError(f"unknown SSE method {method!r}")
    U = model.propagator(dt) if method == "split" else None
    new, drift = _batch_step(np.asarray(state, dtype=complex)[None, :], model, U, dt, np.array([dxi]), method)
    return new[0], float(drift[0])


def _record_grid(t_final: float, dt: float, dt_record: float) -> tuple[np.ndarray, int, int]:
    if t_final <= 0:
        raise ValueError("t_final must be positive")
    if not 0 < dt <= dt_record:
        raise ValueError(f"need 0 < dt <= dt_record, got dt={dt}, dt_record={dt_record}")
    stride = int(round(dt_record / dt))
    if abs(stride * dt - dt_record) > 1e-9 * dt_record:
        raise ValueError("dt_record must be an integer multiple of dt")
    n_rec = int(round(t_final / dt_record))
    if abs(n_rec * dt_record - t_final) > 1e-9 * t_final:
        raise ValueError("t_final must be an integer multiple of dt_record")
    return np.arange(n_rec + 1) * dt_record, stride, n_rec


def sse_ensemble(
    model: ModelSpec,
    initial: np.ndarray,
    t_final: float,
    dt: float,
    base_seed: int,
    indices,
    dt_record: float = 1e-2,
    method: str = "split",
    keep_states: bool = False,
    block_records: int = 50,
) -> SSEEnsemble:
    """Run one SSE trajectory per index in lockstep.

    Row ``i`` consumes ``NoiseStream(base_seed, indices[i])`` one normal
    per step, exactly as :func:`sse_trajectory` does.
    """
    if method not in SSE_METHODS:
        raise ValueError(f"unknown SSE method {method!r}")
    t, stride, n_rec = _record_grid(t_final, dt, dt_record)
    indices = np.asarray(indices, dtype=np.int64)
    M = len(indices)
    psi = np.tile(np.asarray(initial, dtype=complex), (M, 1))
    psi /= np.linalg.norm(psi, axis=1)[:, None]
    U = model.propagator(dt) if method == "split" else None
    noise = BlockNoise(base_seed, indices)
    sqdt = np.sqrt(dt)

    out = {k: np.empty((M, n_rec + 1)) for k in ("mx", "my", "mz", "mz2", "drift")}
    obs = _observables(psi, model)
    for k, v in zip(("mx", "my", "mz", "mz2"), obs):
        out[k][:, 0] = v
    out["drift"][:, 0] = 0.0

    rec = 0
    while rec < n_rec:
        nb = min(block_records, n_rec - rec)
        z = noise.normals(nb * stride)
        for b in range(nb):
            worst = np.zeros(M)
            for s in range(stride):
                psi, drift = _batch_step(psi, model, U, dt, sqdt * z[:, b * stride + s], method)
                np.maximum(worst, np.abs(drift), out=worst)
            rec += 1
            for k, v in zip(("mx", "my", "mz", "mz2"), _observables(psi, model)):
                out[k][:, rec] = v
            out["drift"][:, rec] = worst
    return SSEEnsemble(
        t=t,
        indices=indices,
        mx=out["mx"],
        my=out["my"],
        mz=out["mz"],
        mz2=out["mz2"],
        norm_drift=out["drift"],
        base_seed=int(base_seed),
        final_states=psi if keep_states else None,
    )


def sse_trajectory(
    model: ModelSpec,
    initial: np.ndarray,
    t_final: float,
    dt: float,
    noise: NoiseStream,
    dt_record: float = 1e-2,
    method: str = "split",
) -> TrajectoryRecord:
    """Single SSE trajectory driven by ``noise`` (one normal per step)."""
    t, stride, n_rec = _record_grid(t_final, dt, dt_record)
    psi = np.asarray(initial, dtype=complex)[None, :] / np.linalg.norm(initial)
    U = model.propagator(dt) if method == "split" else None
    sqdt = np.sqrt(dt)
    cols = np.empty((5, n_rec + 1))
    cols[:4, 0] = [v[0] for v in _observables(psi, model)]
    cols[4, 0] = 0.0
    for rec in range(1, n_rec + 1):
        z = noise.normals(stride)
        worst = 0.0
        for s in range(stride):
            psi, drift = _batch_step(psi, model, U, dt, sqdt * z[s : s + 1], method)
            worst = max(worst, abs(float(drift[0])))
        cols[:4, rec] = [v[0] for v in _observables(psi, model)]
        cols[4, rec] = worst
    return TrajectoryRecord(
        t=t,
        mx=cols[0],
        my=cols[1],
        mz=cols[2],
        mz2=cols[3],
        norm_drift=cols[4],
        trajectory_index=noise.trajectory_index,
        final_state=psi[0],
        base_seed=noise.base_seed,
    )


# ---------------------------------------------------------------------------
# Lindblad master equation


@dataclass
class DensityRecord:
    t: np.ndarray
    mx: np.ndarray
    my: np.ndarray
    mz: np.ndarray
    mx2: np.ndarray
    my2: np.ndarray
    mz2: np.ndarray
    purity: np.ndarray
    trace_err: np.ndarray
    min_eig: np.ndarray
    dt: float
    states: list | None = None

    @property
    def max_trace_drift(self) -> float:
        return float(np.max(self.trace_err))


def max_stable_dt(model: ModelSpec, safety: float = 0.9) -> float:
    """Largest RK4 step inside the stability region, with a safety factor.

    The commutator part has imaginary eigenvalues up to the energy spread;
    the dephasing part has real eigenvalues down to -gamma/2 (2S)^2.
    """
    lam_imag = model.energy_spread()
    lam_real = 0.5 * model.gamma * (2.0 * model.S) ** 2
    # RK4 reaches -2.78 on the real axis and 2.83 on the imaginary axis
    return safety * 2.78 / (lam_imag + lam_real + 1e-300)


def _bands(H: np.ndarray) -> list[tuple[int, np.ndarray]]:
    """Nonzero diagonals of H as (offset, values) pairs."""
    n = H.shape[0]
    return [(d, np.diagonal(H, d).copy()) for d in range(-n + 1, n) if np.any(np.diagonal(H, d) != 0)]


def _banded_matmul(bands, rho):
    out = np.zeros_like(rho)
    for d, v in bands:
        if d >= 0:
            out[: len(v)] += v[:, None] * rho[d:]
        else:
            out[-d:] += v[:, None] * rho[: len(v)]
    return out


def _lindblad_rhs(rho, H, D, gamma):
    comm = _banded_matmul(H, rho) if isinstance(H, list) else H @ rho
    comm = comm - comm.conj().T  # H rho - rho H for Hermitian rho
    return -1j * comm - 0.5 * gamma * D * rho


def _density_moments(rho, model: ModelSpec):
    ops = model.ops
    S = model.S
    diag = np.real(np.diag(rho))
    x = model.x_diag
    # tr(rho A) = sum_ij rho_ij A_ji
    mx = np.real(np.sum(rho * ops.sx.T)) / S
    my = np.real(np.sum(rho * ops.sy.T)) / S
    sx2 = ops.sx @ ops.sx
    sy2 = ops.sy @ ops.sy
    mx2 = np.real(np.sum(rho * sx2.T)) / S**2
    my2 = np.real(np.sum(rho * sy2.T)) / S**2
    return mx, my, diag @ x / S, mx2, my2, diag @ (x * x) / S**2


def lindblad_evolve(
    model: ModelSpec,
    rho0: np.ndarray,
    t_grid,
    dt: float | None = None,
    store_states: bool = False,
    trace_tolerance: float = 1e-6,
) -> DensityRecord:
    """Integrate d rho/dt = -i[H, rho] - gamma/2 [X, [X, rho]] with fixed-step RK4.

    The trace is renormalized after every step and the largest per-step
    correction within each record interval is kept in ``trace_err``.
    """
    rho = np.array(rho0, dtype=complex)
    if rho.shape != (model.dim, model.dim):
        raise ValueError(f"rho0 must be {model.dim}x{model.dim}")
    if abs(np.trace(rho) - 1.0) > 1e-8 or np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise ValueError("rho0 must be Hermitian with unit trace")
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or len(t_grid) < 1 or np.any(np.diff(t_grid) <= 0):
        raise ValueError("t_grid must be strictly increasing")
    dt_max = max_stable_dt(model)
    if dt is None:
        dt = min(1e-3, dt_max)
    elif dt > dt_max:
        raise LindbladStepError(f"dt={dt:g} is outside the RK4 stability region; use dt <= {dt_max:.3g}")

    H = np.asarray(model.H)
    bands = _bands(H)
    if len(bands) < model.dim // 4:
        H = bands
    x = model.x_diag
    D = (x[:, None] - x[None, :]) ** 2
    g = model.gamma
    n = len(t_grid)
    cols = {k: np.empty(n) for k in ("mx", "my", "mz", "mx2", "my2", "mz2", "purity", "trace_err", "min_eig")}
    states = [] if store_states else None

    def record(j, worst):
        for k, v in zip(("mx", "my", "mz", "mx2", "my2", "mz2"), _density_moments(rho, model)):
            cols[k][j] = v
        pur = float(np.real(np.vdot(rho, rho)))
        cols["purity"][j] = pur
        cols["trace_err"][j] = worst
        cols["min_eig"][j] = float(np.linalg.eigvalsh(rho)[0])
        if not np.isfinite(pur) or pur > 1.0 + 1e-8:
            raise LindbladStepError(f"purity {pur} > 1 at t={t_grid[j]:g}: RK4 unstable, reduce dt")
        if store_states:
            states.append(rho.copy())

    record(0, 0.0)
    for j in range(1, n):
        span = t_grid[j] - t_grid[j - 1]
        nsteps = max(1, int(np.ceil(span / dt - 1e-9)))
        h = span / nsteps
        worst = 0.0
        for _ in range(nsteps):
            k1 = _lindblad_rhs(rho, H, D, g)
            k2 = _lindblad_rhs(rho + 0.5 * h * k1, H, D, g)
            k3 = _lindblad_rhs(rho + 0.5 * h * k2, H, D, g)
            k4 = _lindblad_rhs(rho + h * k3, H, D, g)
            rho = rho + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            rho = 0.5 * (rho + rho.conj().T)
            tr = np.real(np.trace(rho))
            drift = abs(tr - 1.0)
            if not np.isfinite(tr) or drift > trace_tolerance:
                raise LindbladStepError(f"trace drift {drift:.3e} in one step at t~{t_grid[j]:g}; reduce dt")
            rho /= tr
            worst = max(worst, drift)
        record(j, worst)
    logger.debug("lindblad N=%d: max trace drift %.3e", model.N, max(cols["trace_err"]))
    return DensityRecord(t=t_grid, dt=dt, states=states, **cols)


def adjoint_lindblad_observable(model: ModelSpec, O: np.ndarray, record: DensityRecord) -> np.ndarray:
    """d<O>/dt = i<[H, O]> - gamma/2 <[X, [X, O]]> along a stored density record."""
    if record.states is None:
        raise ValueError("record was produced without store_states=True")
    O = np.asarray(O)
    if O.shape != (model.dim, model.dim):
        raise ValueError("operator dimension does not match the model")
    H, X = np.asarray(model.H), np.asarray(model.X)
    generator = 1j * (H @ O - O @ H)
    XO = X @ O - O @ X
    generator = generator - 0.5 * model.gamma * (X @ XO - XO @ X)
    return np.array([np.real(np.sum(rho * generator.T)) for rho in record.states])


# ---------------------------------------------------------------------------
# discrete ancilla model


def kraus_pair(model: ModelSpec, delta_t: float, coupling: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Two-outcome Kraus operators of the weakly coupled ancilla.

    L_pm = (1 - i dt H -+ sqrt(gamma dt) X - gamma dt X^2 / 2) / sqrt(2), with
    gamma = coupling^2 * delta_t when a coupling is given and
    ``model.gamma`` otherwise.
    """
    if delta_t <= 0:
        raise ValueError("delta_t must be positive")
    gamma = model.gamma if coupling is None else coupling**2 * delta_t
    X = np.asarray(model.X)
    base = np.eye(model.dim) - 1j * delta_t * np.asarray(model.H) - 0.5 * gamma * delta_t * (X @ X)
    kick = np.sqrt(gamma * delta_t) * X
    return (base - kick) / np.sqrt(2.0), (base + kick) / np.sqrt(2.0)


def completeness_residual(model: ModelSpec, delta_t: float) -> float:
    """Spectral norm of L+^dag L+ + L-^dag L- - 1."""
    lp, lm = kraus_pair(model, delta_t)
    resid = lp.conj().T @ lp + lm.conj().T @ lm - np.eye(model.dim)
    return float(np.linalg.norm(resid, 2))


@dataclass
class DiscreteEnsemble:
    t: np.ndarray
    indices: np.ndarray
    mz: np.ndarray
    mz2: np.ndarray
    Y: np.ndarray
    outcomes_plus: np.ndarray
    seed: int
    algorithm: str = OUTCOME_ALGORITHM


def discrete_monitoring_ensemble(
    model: ModelSpec,
    initial: np.ndarray,
    delta_t: float,
    n_steps: int,
    seed: int,
    indices,
    record_every: int = 1,
    block: int = 1000,
) -> DiscreteEnsemble:
    """Repeated weak measurements through the ancilla, one run per index.

    Each step samples a = +-1 with P(a) = <psi|L_a^dag L_a|psi> (normalized
    over the two outcomes), applies L_a and renormalizes.  The record
    Y = sqrt(delta_t) * sum(a) is sampled every ``record_every`` steps.
    """
    if n_steps < 1 or record_every < 1:
        raise ValueError("n_steps and record_every must be positive")
    lp, lm = kraus_pair(model, delta_t)
    Pp = lp.conj().T @ lp
    Pm = lm.conj().T @ lm
    indices = np.asarray(indices, dtype=np.int64)
    gens = [outcome_generator(seed, int(i)) for i in indices]
    M = len(indices)
    psi = np.tile(np.asarray(initial, dtype=complex), (M, 1))
    psi /= np.linalg.norm(psi, axis=1)[:, None]
    n_rec = n_steps // record_every
    t = np.arange(n_rec + 1) * record_every * delta_t
    S, x = model.S, model.x_diag
    mz = np.empty((M, n_rec + 1))
    mz2 = np.empty((M, n_rec + 1))
    Y = np.zeros((M, n_rec + 1))
    n_plus = np.zeros(M, dtype=np.int64)

    def obs(j):
        p = psi.real**2 + psi.imag**2
        mz[:, j] = p @ x / S
        mz2[:, j] = p @ (x * x) / S**2

    obs(0)
    ysum = np.zeros(M)
    step = 0
    u = np.empty((M, 0))
    lpT, lmT = lp.T, lm.T
    while step < n_steps:
        k = step % block
        if k == 0:
            nb = min(block, n_steps - step)
            u = np.stack([g.random(nb) for g in gens]) if M else np.empty((0, nb))
        prob_p = np.real(np.sum(psi.conj() * (psi @ Pp.T), axis=1))
        prob_m = np.real(np.sum(psi.conj() * (psi @ Pm.T), axis=1))
        plus = u[:, k] < prob_p / (prob_p + prob_m)
        psi = np.where(plus[:, None], psi @ lpT, psi @ lmT)
        psi /= np.linalg.norm(psi, axis=1)[:, None]
        n_plus += plus
        ysum += np.where(plus, 1.0, -1.0)
        step += 1
        if step % record_every == 0:
            j = step // record_every
            obs(j)
            Y[:, j] = np.sqrt(delta_t) * ysum
    return DiscreteEnsemble(t=t, indices=indices, mz=mz, mz2=mz2, Y=Y, outcomes_plus=n_plus, seed=int(seed))


def discrete_monitoring_run(
    model: ModelSpec,
    initial: np.ndarray,
    delta_t: float,
    n_steps: int,
    seed: int,
    trajectory_index: int = 0,
    record_every: int = 1,
) -> DiscreteEnsemble:
    """Single ancilla-model run; a one-row :class:`DiscreteEnsemble`."""
    return discrete_monitoring_ensemble(
        model, initial, delta_t, n_steps, seed, [trajectory_index], record_every=record_every
    )
