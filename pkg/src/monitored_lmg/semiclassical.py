"""Thermodynamic-limit stochastic dynamics of the magnetization.

The production integrator works in the cylindrical chart (m_z, phi):

    dm_z = -2 (1 - m_z^2) sin(phi) cos(phi) dt + sqrt(gamma) (1 - m_z^2) dxi
    dphi = 2 (m_z cos^2(phi) - h) dt

with m_z = +-1 absorbing.  The Cartesian form on the unit sphere is kept
as a cross-check because the chart is singular at the poles.

Barrier rule: a step that would leave [-1, 1] is clamped to the wall and
the trajectory is flagged absorbed.  Landing exactly on +-1 through
rounding counts as well, since both drift and noise vanish there.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import IntegrationError
from .noise import NOISE_ALGORITHM, BlockNoise, NoiseStream

logger = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi


def wrap_phi(phi):
    """Map an angle into [-pi, pi)."""
    return (np.asarray(phi) + math.pi) % TWO_PI - math.pi


@dataclass(frozen=True)
class BlochVector:
    mx: float
    my: float
    mz: float

    @property
    def norm2(self) -> float:
        return self.mx**2 + self.my**2 + self.mz**2

    def as_array(self) -> np.ndarray:
        return np.array([self.mx, self.my, self.mz])

    def to_phase_point(self) -> PhasePoint:
        return PhasePoint(float(np.clip(self.mz, -1.0, 1.0)), math.atan2(self.my, self.mx))


@dataclass(frozen=True)
class PhasePoint:
    """Point (m_z, phi) of the cylindrical chart; phi is wrapped into [-pi, pi)."""

    mz: float
    phi: float

    def __post_init__(self):
        if not -1.0 <= self.mz <= 1.0:
            raise ValueError(f"mz must lie in [-1, 1], got {self.mz}")
        object.__setattr__(self, "phi", float(wrap_phi(self.phi)))

    def to_bloch(self) -> BlochVector:
        r = math.sqrt(max(0.0, 1.0 - self.mz * self.mz))
        return BlochVector(r * math.cos(self.phi), r * math.sin(self.phi), self.mz)


# ---------------------------------------------------------------------------
# single steps


def _cartesian_increment(m: np.ndarray, h: float, gamma: float, dt: float, dxi: float) -> np.ndarray:
    mx, my, mz = m
    sg = math.sqrt(gamma)
    return np.array(
        [
            (2 * h * my - 0.5 * gamma * mx) * dt - sg * mz * mx * dxi,
            (-2 * h * mx + 2 * mx * mz - 0.5 * gamma * my) * dt - sg * mz * my * dxi,
            -2 * mx * my * dt + sg * (1 - mz * mz) * dxi,
        ]
    )


def sde_step_cartesian(
    m: BlochVector, h: float, gamma: float, dt: float, dxi: float, return_displacement: bool = False
):
    """Euler-Maruyama step of the Cartesian SDEs, projected back onto the sphere."""
    v = m.as_array()
    if abs(np.dot(v, v) - 1.0) > 1e-6:
        raise ValueError(f"|m|^2 = {np.dot(v, v)} is off the unit sphere")
    new = v + _cartesian_increment(v, h, gamma, dt, dxi)
    norm = math.sqrt(float(np.dot(new, new)))
    if not math.isfinite(norm) or norm == 0.0:
        raise IntegrationError("non-finite Bloch vector; reduce dt")
    projected = new / norm
    disp = float(np.linalg.norm(projected - new))
    logger.debug("cartesian projection displacement %.3e", disp)
    out = BlochVector(*map(float, projected))
    return (out, disp) if return_displacement else out


@numba.njit(cache=True)
def _cyl_step(mz, phi, h, gamma, dt, dxi):
    c = math.cos(phi)
    s = math.sin(phi)
    w = 1.0 - mz * mz
    new_mz = mz - 2.0 * w * s * c * dt + math.sqrt(gamma) * w * dxi
    new_phi = phi + 2.0 * (mz * c * c - h) * dt
    return new_mz, new_phi


def sde_step_cylindrical(p: PhasePoint, h: float, gamma: float, dt: float, dxi: float) -> tuple[PhasePoint, int]:
    """One step in (m_z, phi).  Returns the new point and the wall hit (+1, -1 or 0)."""
    mz, phi = _cyl_step(p.mz, p.phi, h, gamma, dt, dxi)
    if not (math.isfinite(mz) and math.isfinite(phi)):
        raise IntegrationError("non-finite state in cylindrical step")
    hit = 0
    if mz >= 1.0:
        mz, hit = 1.0, 1
    elif mz <= -1.0:
        mz, hit = -1.0, -1
    return PhasePoint(mz, phi), hit


def modulus_drift_check(m: BlochVector, h: float, gamma: float, dt: float, dxi: float) -> float:
    """Ito change of |m|^2 over one step, [gamma dt (mz^2-1) - 2 mz sqrt(gamma) dxi] (|m|^2-1).

    Valid for any |m|, not only the unit sphere; the unit sphere is invariant.
    """
    return (gamma * dt * (m.mz**2 - 1.0) - 2.0 * m.mz * math.sqrt(gamma) * dxi) * (m.norm2 - 1.0)


def em_modulus_change(m: BlochVector, h: float, gamma: float, dt: float, dxi: float) -> float:
    """Raw change of |m|^2 produced by one unprojected Euler-Maruyama step."""
    v = m.as_array()
    new = v + _cartesian_increment(v, h, gamma, dt, dxi)
    return float(np.dot(new, new) - np.dot(v, v))


def large_gamma_step(mz: float, gamma: float, dt: float, dxi: float) -> float:
    """dm_z = sqrt(gamma) (1 - m_z^2) dxi with clamp-and-absorb at +-1."""
    if not -1.0 <= mz <= 1.0:
        raise ValueError("mz must lie in [-1, 1]")
    new = mz + math.sqrt(gamma) * (1.0 - mz * mz) * dxi
    return min(1.0, max(-1.0, new))


# ---------------------------------------------------------------------------
# batched kernels


@numba.njit(cache=True)
def _cylindrical_block(mz, phi, status, t_abs, z, h, gamma, dt, step0, stride, rec_mz, rec_phi):
    """Advance every row through z.shape[1] steps starting at global step ``step0``.

    Column j of the record arrays holds the state after step j * stride.
    """
    M, nsteps = z.shape
    sqdt = math.sqrt(dt)
    for i in range(M):
        a = mz[i]
        p = phi[i]
        st = status[i]
        for k in range(nsteps):
            if st == 0:
                a_new, p = _cyl_step(a, p, h, gamma, dt, sqdt * z[i, k])
                if a_new >= 1.0:
                    a_new = 1.0
                elif a_new <= -1.0:
                    a_new = -1.0
                a = a_new
                if a == 1.0:
                    st = 1
                    t_abs[i] = (step0 + k + 1) * dt
                elif a == -1.0:
                    st = -1
                    t_abs[i] = (step0 + k + 1) * dt
            g = step0 + k + 1
            if g % stride == 0:
                rec_mz[i, g // stride] = a
                rec_phi[i, g // stride] = p
        mz[i] = a
        phi[i] = p
        status[i] = st


@numba.njit(cache=True)
def _large_gamma_block(mz, status, t_abs, z, gamma, dt, step0, stride, rec_mz):
    M, nsteps = z.shape
    amp = math.sqrt(gamma * dt)
    for i in range(M):
        a = mz[i]
        st = status[i]
        for k in range(nsteps):
            if st == 0:
                a = a + amp * (1.0 - a * a) * z[i, k]
                if a >= 1.0:
                    a = 1.0
                    st = 1
                    t_abs[i] = (step0 + k + 1) * dt
                elif a <= -1.0:
                    a = -1.0
                    st = -1
                    t_abs[i] = (step0 + k + 1) * dt
            g = step0 + k + 1
            if g % stride == 0:
                rec_mz[i, g // stride] = a
        mz[i] = a
        status[i] = st


# ---------------------------------------------------------------------------
# trajectories and ensembles


@dataclass
class SemiclassicalTrajectory:
    t: np.ndarray
    mz: np.ndarray
    phi: np.ndarray  # unwrapped
    absorbed: int  # +1, -1 or 0
    absorption_time: float | None
    trajectory_index: int
    base_seed: int | None = None

    @property
    def phi_wrapped(self) -> np.ndarray:
        return wrap_phi(self.phi)

    @property
    def absorbed_label(self) -> str:
        return {1: "plus", -1: "minus", 0: "none"}[self.absorbed]


@dataclass
class SemiclassicalEnsemble:
    """Batched run.  ``mz``/``phi`` have shape (M, len(t)); ``status`` is +1/-1/0."""

    t: np.ndarray
    indices: np.ndarray
    mz: np.ndarray
    phi: np.ndarray
    status: np.ndarray
    t_absorbed: np.ndarray
    base_seed: int
    h: float
    gamma: float
    dt: float
    algorithm: str = NOISE_ALGORITHM

    @property
    def final_mz(self) -> np.ndarray:
        return self.mz[:, -1]

    def trajectory(self, row: int) -> SemiclassicalTrajectory:
        st = int(self.status[row])
        return SemiclassicalTrajectory(
            t=self.t,
            mz=self.mz[row],
            phi=self.phi[row],
            absorbed=st,
            absorption_time=float(self.t_absorbed[row]) if st else None,
            trajectory_index=int(self.indices[row]),
            base_seed=self.base_seed,
        )


def _grid(t_final: float, dt: float, dt_record: float | None):
    if t_final <= 0 or dt <= 0:
        raise ValueError("t_final and dt must be positive")
    n_steps = int(round(t_final / dt))
    if abs(n_steps * dt - t_final) > 1e-9 * t_final:
        raise ValueError("t_final must be an integer multiple of dt")
    if dt_record is None:
        stride = n_steps
    else:
        stride = int(round(dt_record / dt))
        if stride < 1 or abs(stride * dt - dt_record) > 1e-9 * dt_record or n_steps % stride:
            raise ValueError("dt_record must be a multiple of dt dividing t_final")
    n_rec = n_steps // stride
    return n_steps, stride, np.arange(n_rec + 1) * stride * dt


def _run_blocks(kernel_call, noise: BlockNoise, status, n_steps, stride, block_steps, records):
    """Drive a block kernel; noise is drawn only for unabsorbed rows.

    Once every row is absorbed the remaining record columns are filled
    with the frozen final values instead of stepping further.
    """
    step = 0
    while step < n_steps:
        active = status == 0
        if not active.any():
            done = step // stride
            for rec, current in records:
                rec[:, done + 1 :] = current[:, None]
            return
        nb = min(block_steps, n_steps - step)
        kernel_call(noise.normals(nb, active), step)
        step += nb


def simulate_ensemble(
    initial: PhasePoint,
    h: float,
    gamma: float,
    t_final: float,
    dt: float,
    base_seed: int,
    indices,
    dt_record: float | None = None,
    block_steps: int = 4000,
) -> SemiclassicalEnsemble:
    """Integrate the cylindrical SDE for one trajectory per index.

    With ``dt_record=None`` only the initial and final states are kept.
    """
    n_steps, stride, t = _grid(t_final, dt, dt_record)
    indices = np.asarray(indices, dtype=np.int64)
    M = len(indices)
    mz = np.full(M, float(initial.mz))
    phi = np.full(M, float(initial.phi))
    status = np.zeros(M, dtype=np.int64)
    if abs(initial.mz) == 1.0:
        status[:] = int(np.sign(initial.mz))
    t_abs = np.where(status != 0, 0.0, np.nan)
    rec_mz = np.empty((M, len(t)))
    rec_phi = np.empty((M, len(t)))
    rec_mz[:, 0] = mz
    rec_phi[:, 0] = phi
    noise = BlockNoise(base_seed, indices)

    def call(z, step0):
        _cylindrical_block(mz, phi, status, t_abs, z, h, gamma, dt, step0, stride, rec_mz, rec_phi)

    _run_blocks(call, noise, status, n_steps, stride, block_steps, ((rec_mz, mz), (rec_phi, phi)))
    if not (np.all(np.isfinite(mz)) and np.all(np.isfinite(phi))):
        raise IntegrationError("non-finite semiclassical state; reduce dt")
    return SemiclassicalEnsemble(
        t=t, indices=indices, mz=rec_mz, phi=rec_phi, status=status, t_absorbed=t_abs,
        base_seed=int(base_seed), h=float(h), gamma=float(gamma), dt=float(dt),
    )


def simulate_trajectory(
    initial: PhasePoint,
    h: float,
    gamma: float,
    t_final: float,
    dt: float,
    noise: NoiseStream,
    dt_record: float | None = None,
) -> SemiclassicalTrajectory:
    """Single trajectory consuming ``noise`` one normal per step (same as the SSE)."""
    if dt_record is None:
        dt_record = dt
    n_steps, stride, t = _grid(t_final, dt, dt_record)
    mz = np.array([float(initial.mz)])
    phi = np.array([float(initial.phi)])
    status = np.zeros(1, dtype=np.int64)
    if abs(initial.mz) == 1.0:
        status[0] = int(np.sign(initial.mz))
    t_abs = np.array([0.0 if status[0] else np.nan])
    rec_mz = np.empty((1, len(t)))
    rec_phi = np.empty((1, len(t)))
    rec_mz[0, 0], rec_phi[0, 0] = mz[0], phi[0]
    step = 0
    while step < n_steps:
        nb = min(4000, n_steps - step)
        z = noise.normals(nb)[None, :] if status[0] == 0 else np.zeros((1, nb))
        _cylindrical_block(mz, phi, status, t_abs, z, h, gamma, dt, step, stride, rec_mz, rec_phi)
        step += nb
    st = int(status[0])
    return SemiclassicalTrajectory(
        t=t, mz=rec_mz[0], phi=rec_phi[0], absorbed=st,
        absorption_time=float(t_abs[0]) if st else None,
        trajectory_index=noise.trajectory_index, base_seed=noise.base_seed,
    )


def simulate_cartesian(
    initial: BlochVector, h: float, gamma: float, t_final: float, dt: float, dxi: np.ndarray
) -> np.ndarray:
    """Cartesian cross-check integrator; returns the (n+1, 3) path for given increments."""
    n = int(round(t_final / dt))
    if len(dxi) < n:
        raise ValueError("not enough noise increments")
    path = np.empty((n + 1, 3))
    m = initial
    path[0] = m.as_array()
    for k in range(n):
        m = sde_step_cartesian(m, h, gamma, dt, float(dxi[k]))
        path[k + 1] = m.as_array()
    return path


@dataclass
class LargeGammaEnsemble:
    t: np.ndarray
    indices: np.ndarray
    mz: np.ndarray
    status: np.ndarray
    t_absorbed: np.ndarray
    gamma: float
    dt: float
    base_seed: int


def simulate_large_gamma(
    mz0: float,
    gamma: float,
    t_final: float,
    dt: float,
    base_seed: int,
    indices,
    dt_record: float | None = None,
    block_steps: int = 4000,
) -> LargeGammaEnsemble:
    """Ensemble of the pure-noise reduction dm_z = sqrt(gamma)(1 - m_z^2) dxi."""
    n_steps, stride, t = _grid(t_final, dt, dt_record)
    indices = np.asarray(indices, dtype=np.int64)
    M = len(indices)
    mz = np.full(M, float(mz0))
    status = np.zeros(M, dtype=np.int64)
    if abs(mz0) == 1.0:
        status[:] = int(np.sign(mz0))
    t_abs = np.where(status != 0, 0.0, np.nan)
    rec = np.empty((M, len(t)))
    rec[:, 0] = mz
    noise = BlockNoise(base_seed, indices)

    def call(z, step0):
        _large_gamma_block(mz, status, t_abs, z, gamma, dt, step0, stride, rec)

    _run_blocks(call, noise, status, n_steps, stride, block_steps, ((rec, mz),))
    return LargeGammaEnsemble(t=t, indices=indices, mz=rec, status=status, t_absorbed=t_abs,
                              gamma=float(gamma), dt=float(dt), base_seed=int(base_seed))


class CylindricalRunner:
    """Resumable ensemble state for open-ended runs.

    ``advance_to`` continues every trajectory with its own noise stream,
    so advancing to T in several calls gives bit-identical states to a
    single call, provided the same ``dt``.  Only the current state is kept.
    """

    _NO_RECORD = 1 << 62

    def __init__(self, initial: PhasePoint, h: float, gamma: float, dt: float, base_seed: int, indices,
                 block_steps: int = 4000):
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.h, self.gamma, self.dt = float(h), float(gamma), float(dt)
        self.base_seed = int(base_seed)
        self.indices = np.asarray(indices, dtype=np.int64)
        M = len(self.indices)
        self.mz = np.full(M, float(initial.mz))
        self.phi = np.full(M, float(initial.phi))
        self.status = np.zeros(M, dtype=np.int64)
        if abs(initial.mz) == 1.0:
            self.status[:] = int(np.sign(initial.mz))
        self.t_absorbed = np.where(self.status != 0, 0.0, np.nan)
        self.steps = 0
        self.block_steps = block_steps
        self._noise = BlockNoise(self.base_seed, self.indices)
        self._dummy = np.empty((M, 1))

    @property
    def t(self) -> float:
        return self.steps * self.dt

    def advance_to(self, t_final: float) -> CylindricalRunner:
        target = int(round(t_final / self.dt))
        if abs(target * self.dt - t_final) > 1e-9 * max(t_final, 1.0):
            raise ValueError("t_final must be an integer multiple of dt")
        while self.steps < target:
            active = self.status == 0
            if not active.any():
                self.steps = target
                break
            nb = min(self.block_steps, target - self.steps)
            z = self._noise.normals(nb, active)
            _cylindrical_block(self.mz, self.phi, self.status, self.t_absorbed, z, self.h, self.gamma,
                               self.dt, self.steps, self._NO_RECORD, self._dummy, self._dummy)
            self.steps += nb
        if not (np.all(np.isfinite(self.mz)) and np.all(np.isfinite(self.phi))):
            raise IntegrationError("non-finite semiclassical state; reduce dt")
        return self
