import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from monitored_lmg.classical_flow import hamiltonian_energy
from monitored_lmg.errors import IntegrationError
from monitored_lmg.noise import NoiseStream
from monitored_lmg.semiclassical import (
    BlochVector,
    CylindricalRunner,
    PhasePoint,
    em_modulus_change,
    large_gamma_step,
    modulus_drift_check,
    sde_step_cartesian,
    sde_step_cylindrical,
    simulate_cartesian,
    simulate_ensemble,
    simulate_large_gamma,
    simulate_trajectory,
    wrap_phi,
)


def test_phase_point_wraps_and_validates():
    p = PhasePoint(0.2, 3 * math.pi)
    assert -math.pi <= p.phi < math.pi
    assert p.phi == pytest.approx(-math.pi)
    with pytest.raises(ValueError):
        PhasePoint(1.2, 0.0)
    assert wrap_phi(math.pi) == pytest.approx(-math.pi)


@settings(max_examples=50, deadline=None)
@given(st.floats(-1, 1), st.floats(-math.pi, math.pi, exclude_max=True))
def test_bloch_phase_roundtrip(mz, phi):
    p = PhasePoint(mz, phi)
    b = p.to_bloch()
    assert b.norm2 == pytest.approx(1.0, abs=1e-12)
    back = b.to_phase_point()
    assert back.mz == pytest.approx(mz, abs=1e-12)
    if abs(mz) < 1 - 1e-9:
        assert math.cos(back.phi - p.phi) == pytest.approx(1.0, abs=1e-9)


def test_cartesian_step_hand_evaluated():
    m = BlochVector(1.0, 0.0, 0.0)
    h, g, dt, dxi = 0.3, 0.1, 1e-3, 0.02
    # increments with mx=1, my=mz=0
    raw = np.array([1.0 - 0.5 * g * dt, -2 * h * dt, math.sqrt(g) * dxi])
    new = sde_step_cartesian(m, h, g, dt, dxi)
    assert np.allclose(new.as_array(), raw / np.linalg.norm(raw), atol=1e-15)


def test_cartesian_poles_are_fixed():
    for mz in (1.0, -1.0):
        new = sde_step_cartesian(BlochVector(0.0, 0.0, mz), 0.4, 0.7, 1e-2, 0.3)
        assert new.as_array() == pytest.approx([0.0, 0.0, mz])


def test_cartesian_precession_without_monitoring():
    # dm/dt = -2 (mx x + h z) x m, integrated with small steps
    m0 = BlochVector(0.6, 0.0, 0.8)
    h, dt, n = 0.4, 1e-5, 2000
    path = simulate_cartesian(m0, h, 0.0, n * dt, dt, np.zeros(n))
    v = m0.as_array()
    for _ in range(n):
        v = v + dt * (-2.0 * np.cross(np.array([v[0], 0.0, h]), v))
    assert np.allclose(path[-1], v / np.linalg.norm(v), atol=1e-6)


def test_cartesian_rejects_off_sphere_input():
    with pytest.raises(ValueError):
        sde_step_cartesian(BlochVector(0.5, 0.0, 0.0), 0.3, 0.1, 1e-3, 0.0)


def test_cylindrical_step_hand_evaluated():
    p, hit = sde_step_cylindrical(PhasePoint(0.0, 0.0), 0.02, 0.01, 1e-3, 0.02)
    assert hit == 0
    # sin(phi)cos(phi)=0 kills the drift: dmz = sqrt(gamma) dxi
    assert p.mz == pytest.approx(0.1 * 0.02, abs=1e-16)
    assert p.phi == pytest.approx(-2 * 0.02 * 1e-3, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(st.floats(-3, 3))
def test_cylindrical_barrier_is_absorbing(dxi):
    for mz in (1.0, -1.0):
        p, _ = sde_step_cylindrical(PhasePoint(mz, 0.4), 0.3, 0.5, 1e-3, dxi)
        assert p.mz == mz


def test_cylindrical_overshoot_is_clamped():
    p, hit = sde_step_cylindrical(PhasePoint(0.99, 0.0), 0.3, 1.0, 1e-3, 1.0)
    assert (p.mz, hit) == (1.0, 1)
    p, hit = sde_step_cylindrical(PhasePoint(-0.99, 0.0), 0.3, 1.0, 1e-3, -1.0)
    assert (p.mz, hit) == (-1.0, -1)


def test_cylindrical_nonfinite_raises():
    with pytest.raises(IntegrationError):
        sde_step_cylindrical(PhasePoint(0.0, 0.0), 0.3, 1.0, 1e-3, math.inf)


def test_cylindrical_without_monitoring_is_hamiltonian():
    # dmz/dt = -dH/dphi, dphi/dt = dH/dmz for H = -(1 - mz^2) cos^2 phi - 2 h mz
    mz, phi, h, dt = 0.3, 0.7, 0.4, 1e-6
    p, _ = sde_step_cylindrical(PhasePoint(mz, phi), h, 0.0, dt, 0.0)
    dH_dphi = (1 - mz**2) * 2 * math.sin(phi) * math.cos(phi)
    dH_dmz = 2 * mz * math.cos(phi) ** 2 - 2 * h
    assert (p.mz - mz) / dt == pytest.approx(-dH_dphi, rel=1e-9)
    assert (p.phi - phi) / dt == pytest.approx(dH_dmz, rel=1e-9)


def test_modulus_drift_formula_examples():
    assert modulus_drift_check(BlochVector(1.0, 0.0, 0.0), 0.3, 0.5, 1e-3, 0.7) == 0.0
    g, dt = 0.5, 1e-3
    m = BlochVector(math.sqrt(0.9), 0.0, 0.0)
    assert modulus_drift_check(m, 0.3, g, dt, 0.2) == pytest.approx(-g * dt * (-0.1), rel=1e-12)
    m = BlochVector(math.sqrt(1.1 - 0.25), 0.0, 0.5)
    assert modulus_drift_check(m, 0.3, g, dt, 0.0) == pytest.approx(g * dt * (0.25 - 1) * 0.1, rel=1e-12)


def test_modulus_formula_matches_raw_euler_step_to_leading_order():
    m = BlochVector(0.7, 0.3, 0.5)  # |m|^2 = 0.83
    g, dt = 0.4, 1e-6
    dxi = math.sqrt(dt)
    raw = 0.5 * (em_modulus_change(m, 0.3, g, dt, dxi) + em_modulus_change(m, 0.3, g, dt, -dxi))
    formula = 0.5 * (modulus_drift_check(m, 0.3, g, dt, dxi) + modulus_drift_check(m, 0.3, g, dt, -dxi))
    # the Ito dxi^2 term makes the sign-averaged raw change equal the drift part
    assert raw == pytest.approx(formula, rel=1e-3)


def test_large_gamma_step_fixed_points_and_clamp():
    assert large_gamma_step(1.0, 50.0, 1e-3, 0.4) == 1.0
    assert large_gamma_step(-1.0, 50.0, 1e-3, 0.4) == -1.0
    assert large_gamma_step(0.9, 50.0, 1e-3, 1.0) == 1.0
    assert large_gamma_step(0.0, 4.0, 1e-3, 0.01) == pytest.approx(0.02)
    with pytest.raises(ValueError):
        large_gamma_step(1.5, 1.0, 1e-3, 0.0)


def test_large_gamma_martingale():
    ens = simulate_large_gamma(0.5, 50.0, 0.04, 1e-4, 0, np.arange(20_000), dt_record=0.01)
    mean = ens.mz.mean(axis=0)
    se = ens.mz.std(axis=0, ddof=1) / math.sqrt(ens.mz.shape[0])
    assert np.all(np.abs(mean - 0.5) <= 3 * np.maximum(se, 1e-12))


def test_trajectory_matches_ensemble_row_and_replays():
    init = PhasePoint(0.1, 0.2)
    a = simulate_trajectory(init, 0.3, 0.5, 5.0, 1e-3, NoiseStream(4, 11), dt_record=0.5)
    b = simulate_trajectory(init, 0.3, 0.5, 5.0, 1e-3, NoiseStream(4, 11), dt_record=0.5)
    ens = simulate_ensemble(init, 0.3, 0.5, 5.0, 1e-3, 4, [2, 11], dt_record=0.5)
    assert np.array_equal(a.mz, b.mz)
    assert np.array_equal(ens.mz[1], a.mz)
    assert np.array_equal(ens.phi[1], a.phi)


def test_absorbing_phase_drives_to_south_pole():
    # h=0.02, gamma=0.01 is well below the critical rate 0.28
    tr = simulate_trajectory(PhasePoint(0.0, 0.0), 0.02, 0.01, 2000.0, 1e-2, NoiseStream(0, 0), dt_record=10.0)
    assert tr.mz[-1] < -0.999


def test_absorption_is_permanent():
    ens = simulate_ensemble(PhasePoint(0.5, 0.0), 0.02, 50.0, 2.0, 1e-4, 0, np.arange(500), dt_record=0.01)
    absorbed = ens.status != 0
    assert absorbed.mean() > 0.9
    for row in np.flatnonzero(absorbed):
        k = int(round(ens.t_absorbed[row] / 0.01 + 0.5))
        assert np.all(ens.mz[row, k:] == ens.status[row])


def test_no_absorption_without_monitoring_and_start_on_pole():
    ens = simulate_ensemble(PhasePoint(0.3, 1.0), 0.3, 0.0, 20.0, 1e-3, 0, np.arange(4))
    assert np.all(ens.status == 0)
    ens = simulate_ensemble(PhasePoint(-1.0, 0.0), 0.3, 0.5, 1.0, 1e-3, 0, np.arange(4))
    assert np.all(ens.status == -1) and np.all(ens.mz == -1.0)


def test_energy_without_monitoring():
    # the step is Euler-Maruyama, so the energy error grows like dt * t
    start = PhasePoint(0.2, 0.5)
    h = 0.3
    e0 = hamiltonian_energy(start, h)
    tr = simulate_trajectory(start, h, 0.0, 100.0, 1e-4, NoiseStream(0, 0), dt_record=1.0)
    drift = max(abs(hamiltonian_energy(PhasePoint(z, f), h) - e0) for z, f in zip(tr.mz, tr.phi))
    assert drift < 1e-4


def test_cylindrical_and_cartesian_agree_to_first_order():
    # same noise, same start; median over seeds of the max |mz| gap on [0, 20],
    # skipping paths that come close to the poles
    h, g, T = 0.3, 0.2, 20.0
    start = PhasePoint(0.1, 0.3)
    dts = [1e-3, 5e-4, 2.5e-4, 1.25e-4]
    gaps = []
    for dt in dts:
        per_seed = []
        for seed in range(20):
            n = int(round(T / dt))
            z = NoiseStream(seed, 0).normals(n) * math.sqrt(dt)
            cyl = simulate_trajectory(start, h, g, T, dt, NoiseStream(seed, 0), dt_record=dt)
            if np.max(np.abs(cyl.mz)) > 0.99:
                continue
            cart = simulate_cartesian(start.to_bloch(), h, g, T, dt, z)
            per_seed.append(np.max(np.abs(cart[:, 2] - cyl.mz)))
        gaps.append(np.median(per_seed))
    slope = np.polyfit(np.log(dts), np.log(gaps), 1)[0]
    assert slope == pytest.approx(1.0, abs=0.3)


def test_runner_continuation_is_bit_identical():
    init = PhasePoint(0.0, 0.0)
    idx = np.arange(64)
    one = CylindricalRunner(init, 0.3, 0.6, 1e-3, 5, idx).advance_to(6.0)
    two = CylindricalRunner(init, 0.3, 0.6, 1e-3, 5, idx).advance_to(2.5).advance_to(6.0)
    ens = simulate_ensemble(init, 0.3, 0.6, 6.0, 1e-3, 5, idx)
    assert np.array_equal(one.mz, two.mz) and np.array_equal(one.status, two.status)
    assert np.array_equal(one.mz, ens.final_mz)
    assert one.t == pytest.approx(6.0)
