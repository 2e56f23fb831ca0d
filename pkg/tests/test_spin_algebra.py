import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import comb

from monitored_lmg.spin_algebra import (
    CSV_HEADER,
    Axis,
    build_collective_operators,
    coherent_state,
    connected_correlator,
    expectation,
    expectation_density,
    read_operator_csv,
    write_operator_csv,
)

N_GRID = [1, 2, 4, 8, 16, 64]
angles = st.tuples(st.floats(0.0, math.pi), st.floats(-math.pi, math.pi, exclude_max=True))


@pytest.mark.parametrize("N", N_GRID)
def test_commutators_casimir_hermiticity(N):
    ops = build_collective_operators(N)
    S = ops.S
    sx, sy, sz = ops.sx, ops.sy, ops.sz
    assert np.max(np.abs(sx @ sy - sy @ sx - 1j * sz)) < 1e-12
    assert np.max(np.abs(sy @ sz - sz @ sy - 1j * sx)) < 1e-12
    assert np.max(np.abs(sz @ sx - sx @ sz - 1j * sy)) < 1e-12
    casimir = sx @ sx + sy @ sy + sz @ sz
    assert np.max(np.abs(casimir - S * (S + 1) * np.eye(ops.dim))) < 1e-12 * max(1.0, S * S)
    for a in (sx, sy, sz):
        assert np.max(np.abs(a - a.conj().T)) < 1e-14
    # reduced operators: [m_x, m_y] = (i/S) m_z
    assert np.max(np.abs(ops.mx @ ops.my - ops.my @ ops.mx - 1j / S * ops.mz)) < 1e-12


def test_spin_one_matrices():
    ops = build_collective_operators(2)
    assert np.allclose(ops.sz, np.diag([1, 0, -1]))
    assert np.allclose(ops.sx @ ops.sx + ops.sy @ ops.sy + ops.sz @ ops.sz, 2 * np.eye(3))


def test_sx_matrix_elements_follow_formula():
    ops = build_collective_operators(5)
    S, m = ops.S, ops.m_values
    for i in range(ops.dim):
        for j in range(ops.dim):
            adjacent = abs(m[i] - m[j]) == 1
            expected = 0.5 * math.sqrt(S * (S + 1) - m[i] * m[j]) if adjacent else 0.0
            assert ops.sx[i, j] == pytest.approx(expected, abs=1e-14)


@pytest.mark.parametrize("bad", [0, -3, 2.5])
def test_rejects_bad_particle_number(bad):
    with pytest.raises(ValueError):
        build_collective_operators(bad)


def test_operators_are_read_only():
    ops = build_collective_operators(4)
    with pytest.raises(ValueError):
        ops.sx[0, 0] = 1.0


def test_north_pole_is_top_basis_state():
    ops = build_collective_operators(6)
    psi = coherent_state(ops, 0.0, 0.3)
    expected = np.zeros(ops.dim)
    expected[0] = 1.0
    assert np.allclose(psi, expected, atol=1e-15)
    assert expectation(psi, ops.sz) == pytest.approx(ops.S)


def test_coherent_amplitudes_match_binomial_formula():
    ops = build_collective_operators(6)
    S, theta, phi = ops.S, 1.2, -0.4
    psi = coherent_state(ops, theta, phi)
    for k, m in enumerate(ops.m_values):
        amp = math.sqrt(comb(2 * S, m + S)) * (np.exp(1j * phi) * math.sin(theta / 2)) ** (S - m) * math.cos(theta / 2) ** (S + m)
        assert psi[k] == pytest.approx(amp, abs=1e-13)


def test_equatorial_state_sx_expectation():
    ops = build_collective_operators(8)
    psi = coherent_state(ops, math.pi / 2, 0.0)
    assert abs(expectation(psi, ops.sx) - 4.0) < 1e-12


@settings(max_examples=40, deadline=None)
@given(angles, st.sampled_from([3, 8, 21]))
def test_coherent_state_is_top_eigenvector(ang, N):
    theta, phi = ang
    ops = build_collective_operators(N)
    psi = coherent_state(ops, theta, phi)
    assert np.linalg.norm(psi) == pytest.approx(1.0, abs=1e-12)
    n = (math.sin(theta) * math.cos(phi), math.sin(theta) * math.sin(phi), math.cos(theta))
    ndotS = n[0] * ops.sx + n[1] * ops.sy + n[2] * ops.sz
    assert np.max(np.abs(ndotS @ psi - ops.S * psi)) < 1e-10
    assert expectation(psi, ops.mz) == pytest.approx(math.cos(theta), abs=1e-12)


def test_large_spin_coherent_state_does_not_overflow():
    ops = build_collective_operators(2000)
    psi = coherent_state(ops, 2.0, 1.0)
    assert np.all(np.isfinite(psi))
    assert expectation(psi, ops.mz) == pytest.approx(math.cos(2.0), abs=1e-10)


@pytest.mark.parametrize("theta,phi", [(-0.1, 0.0), (3.2, 0.0), (1.0, math.pi), (1.0, -3.2)])
def test_coherent_rejects_out_of_range_angles(theta, phi):
    ops = build_collective_operators(4)
    with pytest.raises(ValueError):
        coherent_state(ops, theta, phi)


def test_expectation_dimension_mismatch():
    a = build_collective_operators(4)
    b = build_collective_operators(5)
    with pytest.raises(ValueError, match="dimension"):
        expectation(coherent_state(a, 1.0, 0.0), b.sz)


def test_expectation_rejects_non_hermitian_residue():
    ops = build_collective_operators(4)
    psi = coherent_state(ops, 1.0, 0.5)
    with pytest.raises(ValueError):
        expectation(psi, 1j * ops.sx + ops.sy)


def test_maximally_mixed_is_unpolarized():
    ops = build_collective_operators(7)
    rho = np.eye(ops.dim) / ops.dim
    for axis in Axis:
        assert abs(expectation_density(rho, ops.reduced(axis))) < 1e-15


@settings(max_examples=30, deadline=None)
@given(angles, st.sampled_from([2, 9, 30]))
def test_zz_correlator_exact(ang, N):
    ops = build_collective_operators(N)
    psi = coherent_state(ops, *ang)
    mz = expectation(psi, ops.mz)
    assert connected_correlator(psi, ops, "z", "z") == pytest.approx((1 - mz * mz) / ops.S, abs=1e-12)


def test_xz_correlator_leading_order():
    ops = build_collective_operators(40)
    psi = coherent_state(ops, 1.0, 0.4)
    mx, mz = expectation(psi, ops.mx), expectation(psi, ops.mz)
    assert connected_correlator(psi, ops, Axis.X, Axis.Z) == pytest.approx(-mx * mz / ops.S, abs=1.0 / ops.S**2)


def test_eigenstate_has_no_z_fluctuations():
    ops = build_collective_operators(6)
    psi = np.zeros(ops.dim, complex)
    psi[0] = 1.0
    assert abs(connected_correlator(psi, ops, "z", "z")) < 1e-15


def test_operator_csv_roundtrip(tmp_path):
    ops = build_collective_operators(3)
    path = tmp_path / "sy.csv"
    write_operator_csv(path, ops.sy)
    assert path.read_text().splitlines()[0] == CSV_HEADER
    assert np.array_equal(read_operator_csv(path), ops.sy)
