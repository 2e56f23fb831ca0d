"""Deterministic (unmonitored) mean-field flow on the Bloch sphere.

Classical energy in the cylindrical chart:

    H(m_z, phi) = -(1 - m_z^2) cos^2(phi) - 2 h m_z

with Hamilton equations  dm_z/dt = -dH/dphi,  dphi/dt = dH/dm_z.  For
h < 1 the level E = -2h is a separatrix between librations (phi bounded,
E < -2h) and rotations (phi winds); for h >= 1 every orbit rotates.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy.optimize import minimize

from .errors import EnergyDriftError
from .semiclassical import PhasePoint, wrap_phi

SEPARATRIX_TOL = 1e-12
ENERGY_DRIFT_TOL = 1e-4


class OrbitClass(str, enum.Enum):
    LIBRATION = "libration"
    ROTATION = "rotation"
    SEPARATRIX = "separatrix"


def hamiltonian_energy(p: PhasePoint, h: float) -> float:
    c = math.cos(p.phi)
    return -(1.0 - p.mz * p.mz) * c * c - 2.0 * h * p.mz


def _energy(mz, phi, h):
    return -(1.0 - mz * mz) * np.cos(phi) ** 2 - 2.0 * h * mz


def _minimum_energy(h: float) -> float:
    """Global minimum of H over [-1, 1] x [-pi, pi), found numerically."""
    mz = np.linspace(-1.0, 1.0, 81)
    phi = np.linspace(-math.pi, math.pi, 81)
    grid = _energy(mz[:, None], phi[None, :], h)
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    res = minimize(
        lambda v: _energy(v[0], v[1], h),
        x0=[mz[i], phi[j]],
        bounds=[(-1.0, 1.0), (-math.pi, math.pi)],
        method="L-BFGS-B",
        options={"ftol": 1e-15, "gtol": 1e-12},
    )
    return float(min(res.fun, grid[i, j]))


@dataclass(frozen=True)
class EnergyLevel:
    """Energy shell E at field h; rejects E below the phase-space minimum."""

    E: float
    h: float
    E_min: float = field(init=False, repr=False)

    def __post_init__(self):
        if not (math.isfinite(self.E) and math.isfinite(self.h)) or self.h < 0:
            raise ValueError(f"invalid level E={self.E}, h={self.h}")
        e_min = _minimum_energy(self.h)
        if self.E < e_min - 1e-9:
            raise ValueError(f"E={self.E} lies below the minimum energy {e_min:.12g} at h={self.h}")
        e_max = 2.0 * self.h if self.h > 0 else 0.0
        if self.E > e_max + 1e-12:
            raise ValueError(f"E={self.E} exceeds the maximum energy {e_max} at h={self.h}")
        object.__setattr__(self, "E_min", e_min)

    def start_point(self) -> PhasePoint:
        """Point of the level on the phi = 0 section.

        Librations cross phi = 0 at m_z = h + sqrt(h^2 + 1 + E); rotations
        at the lower root.
        """
        disc = math.sqrt(max(0.0, self.h * self.h + 1.0 + self.E))
        if classify_orbit(self) is OrbitClass.LIBRATION:
            mz = self.h + disc
        else:
            mz = self.h - disc
        return PhasePoint(float(np.clip(mz, -1.0, 1.0)), 0.0)


def classify_orbit(level: EnergyLevel) -> OrbitClass:
    if level.h >= 1.0:
        return OrbitClass.ROTATION
    if abs(level.E + 2.0 * level.h) <= SEPARATRIX_TOL:
        return OrbitClass.SEPARATRIX
    if level.E < -2.0 * level.h:
        return OrbitClass.LIBRATION
    return OrbitClass.ROTATION


def separatrix_mz(phi: float, h: float) -> float | None:
    """m_z on the separatrix branch (1 + m_z) cos^2(phi) = 2h, or None off its domain."""
    if not 0.0 < h < 1.0:
        raise ValueError(f"separatrix defined for 0 < h < 1, got h={h}")
    c2 = math.cos(phi) ** 2
    if c2 <= h:
        return None
    return 2.0 * h / c2 - 1.0


def separatrix_curve(h: float, n: int = 721) -> tuple[np.ndarray, np.ndarray]:
    """Sample the separatrix on a uniform phi grid in [-pi, pi); undefined points are dropped."""
    phi = -math.pi + 2.0 * math.pi * np.arange(n) / n
    mz = [separatrix_mz(p, h) for p in phi]
    keep = np.array([m is not None for m in mz])
    return phi[keep], np.array([m for m in mz if m is not None])


# ---------------------------------------------------------------------------
# integration


@numba.njit(cache=True)
def _rhs(mz, phi, h):
    s = math.sin(phi)
    c = math.cos(phi)
    return -2.0 * (1.0 - mz * mz) * s * c, 2.0 * (mz * c * c - h)


@numba.njit(cache=True)
def _rk4(mz, phi, h, dt):
    k1z, k1p = _rhs(mz, phi, h)
    k2z, k2p = _rhs(mz + 0.5 * dt * k1z, phi + 0.5 * dt * k1p, h)
    k3z, k3p = _rhs(mz + 0.5 * dt * k2z, phi + 0.5 * dt * k2p, h)
    k4z, k4p = _rhs(mz + dt * k3z, phi + dt * k3p, h)
    return (
        mz + dt / 6.0 * (k1z + 2.0 * k2z + 2.0 * k3z + k4z),
        phi + dt / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p),
    )


@numba.njit(cache=True)
def _flow_kernel(mz0, phi0, h, dt, n_steps, stride, out_mz, out_phi):
    mz = mz0
    phi = phi0
    out_mz[0] = mz
    out_phi[0] = phi
    for k in range(1, n_steps + 1):
        mz, phi = _rk4(mz, phi, h, dt)
        if k % stride == 0:
            out_mz[k // stride] = mz
            out_phi[k // stride] = phi


@dataclass
class FlowTrajectory:
    t: np.ndarray
    mz: np.ndarray
    phi: np.ndarray  # unwrapped
    energy: np.ndarray
    h: float

    @property
    def max_energy_drift(self) -> float:
        return float(np.max(np.abs(self.energy - self.energy[0])))


def hamiltonian_flow(
    initial: PhasePoint, h: float, t_final: float, dt: float = 1e-4, dt_record: float | None = None
) -> FlowTrajectory:
    """RK4 integration of the Hamilton equations.

    Raises
    ------
    EnergyDriftError
        If the energy at any recorded time differs from the initial
        value by more than 1e-4.
    """
    if t_final <= 0 or dt <= 0:
        raise ValueError("t_final and dt must be positive")
    n_steps = int(round(t_final / dt))
    stride = 1 if dt_record is None else max(1, int(round(dt_record / dt)))
    n_rec = n_steps // stride
    mz = np.empty(n_rec + 1)
    phi = np.empty(n_rec + 1)
    _flow_kernel(float(initial.mz), float(initial.phi), float(h), float(dt), n_rec * stride, stride, mz, phi)
    energy = _energy(mz, phi, h)
    traj = FlowTrajectory(t=np.arange(n_rec + 1) * stride * dt, mz=mz, phi=phi, energy=energy, h=float(h))
    drift = traj.max_energy_drift
    if not math.isfinite(drift) or drift > ENERGY_DRIFT_TOL:
        raise EnergyDriftError(f"energy drift {drift:.3e} exceeds {ENERGY_DRIFT_TOL:g}; reduce dt")
    return traj


def _quadratic_root(t3, y3, lo, hi):
    """Root of the parabola through three samples inside [lo, hi]; linear fallback."""
    coeff = np.polyfit(np.asarray(t3) - lo, np.asarray(y3), 2)
    roots = np.roots(coeff)
    good = [r.real + lo for r in roots if abs(r.imag) < 1e-12 and -1e-12 <= r.real <= hi - lo + 1e-12]
    if good:
        return min(good, key=lambda r: abs(r - 0.5 * (lo + hi)))
    y0, y1 = y3[1], y3[2]
    return lo + (hi - lo) * y0 / (y0 - y1)


@numba.njit(cache=True)
def _first_section_crossing(mz0, phi0, h, dt, max_steps, section, period, direction):
    """Step until phi crosses section (mod period) with sign(dphi/dt) == direction.

    Returns (k, history) where the crossing lies between steps k and k+1 and
    history holds (t, phi) at steps k-1, k, k+1; k = -1 if none was found.
    """
    mz = mz0
    phi = phi0
    hist_phi = np.empty(3)
    hist_phi[0] = phi
    hist_phi[1] = phi
    prev_n = math.floor((phi - section) / period)
    for k in range(max_steps):
        mz_new, phi_new = _rk4(mz, phi, h, dt)
        n_new = math.floor((phi_new - section) / period)
        rate = 2.0 * (mz_new * math.cos(phi_new) ** 2 - h)
        if k > 0 and n_new != prev_n and rate * direction > 0:
            base = section + period * max(n_new, prev_n)
            mz2, phi2 = _rk4(mz_new, phi_new, h, dt)
            hist_phi[0] = phi - base
            hist_phi[1] = phi_new - base
            hist_phi[2] = phi2 - base
            return k, hist_phi
        prev_n = n_new
        mz = mz_new
        phi = phi_new
    return -1, hist_phi


def _section_time(initial: PhasePoint, h, dt, t_max, section, period, direction) -> float:
    max_steps = int(math.ceil(t_max / dt))
    k, hist = _first_section_crossing(float(initial.mz), float(initial.phi), float(h), float(dt), max_steps,
                                      float(section), float(period), float(direction))
    if k < 0:
        raise RuntimeError(f"no section crossing within t_max={t_max}")
    # crossing between steps k and k+1 (times k*dt and (k+1)*dt)
    t3 = np.array([k, k + 1, k + 2]) * dt
    return float(_quadratic_root(t3, hist, t3[0], t3[1]))


def orbit_period(level: EnergyLevel, dt: float = 1e-4, t_max: float = 1e3) -> float:
    """Full period from the Poincare return to the phi = 0 section.

    The return must cross with the same sign of dphi/dt as at the start;
    for rotations this is after phi has advanced by 2 pi.
    """
    cls = classify_orbit(level)
    if cls is OrbitClass.SEPARATRIX:
        raise ValueError("the separatrix has an infinite period")
    start = level.start_point()
    direction = math.copysign(1.0, start.mz - level.h) if start.mz != level.h else 1.0
    return _section_time(start, level.h, dt, t_max, 0.0, 2.0 * math.pi, direction)


def orbit_average_mx(level: EnergyLevel, dt: float = 1e-4) -> float:
    """Time average of m_x over one period."""
    T = orbit_period(level, dt=dt)
    n = int(math.ceil(T / dt))
    traj = hamiltonian_flow(level.start_point(), level.h, n * dt, dt=dt)
    mx = np.sqrt(np.clip(1.0 - traj.mz**2, 0.0, None)) * np.cos(traj.phi)
    keep = traj.t <= T
    return float(np.trapezoid(mx[keep], traj.t[keep]) / traj.t[keep][-1])


# ---------------------------------------------------------------------------
# escape from the barrier


def escape_time(delta_z: float, h: float) -> float:
    """Asymptotic time spent near m_z = 1 when starting at distance delta_z: -ln(dz) / (4 sqrt(h(1-h)))."""
    if not 0.0 < delta_z < 1.0:
        raise ValueError(f"delta_z must lie in (0, 1), got {delta_z}")
    if not 0.0 < h < 1.0:
        raise ValueError(f"h must lie in (0, 1), got {h}")
    return -math.log(delta_z) / (4.0 * math.sqrt(h * (1.0 - h)))


def measured_escape_time(delta_z: float, h: float, dt: float = 1e-4, t_max: float = 1e3) -> float:
    """Flow time from (1 - delta_z, pi/2) to the first phi = 0 (mod pi) crossing.

    The orbit leaves the barrier region through phi = pi/2 and reaches the
    nearest phi = 0 (mod pi) section after half of its pass across the
    barrier.
    """
    if not 0.0 < delta_z < 1.0:
        raise ValueError(f"delta_z must lie in (0, 1), got {delta_z}")
    start = PhasePoint(1.0 - delta_z, 0.5 * math.pi)
    rate = 2.0 * (start.mz * math.cos(start.phi) ** 2 - h)
    return _section_time(start, h, dt, t_max, 0.0, math.pi, math.copysign(1.0, rate))


__all__ = [
    "OrbitClass",
    "EnergyLevel",
    "FlowTrajectory",
    "hamiltonian_energy",
    "classify_orbit",
    "separatrix_mz",
    "separatrix_curve",
    "hamiltonian_flow",
    "orbit_period",
    "orbit_average_mx",
    "escape_time",
    "measured_escape_time",
    "wrap_phi",
]
