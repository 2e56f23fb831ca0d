"""Collective spin operators and coherent spin states in the Dicke basis.

All matrices live in the maximal total-spin sector S = N/2 and use the
basis ordering m = S, S-1, ..., -S (descending S_z eigenvalue).  Row
``k`` of every operator corresponds to ``m = S - k``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import gammaln, xlogy

CSV_HEADER = "# dicke basis, m descending"


class Axis(str, enum.Enum):
    X = "x"
    Y = "y"
    Z = "z"


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class CollectiveSpinOps:
    """Dense S_x, S_y, S_z for spin S = N/2 (read-only arrays)."""

    N: int
    S: float
    dim: int
    sx: np.ndarray = field(repr=False)
    sy: np.ndarray = field(repr=False)
    sz: np.ndarray = field(repr=False)

    @property
    def m_values(self) -> np.ndarray:
        """S_z eigenvalues in basis order."""
        return self.S - np.arange(self.dim, dtype=float)

    @property
    def mx(self) -> np.ndarray:
        return self.sx / self.S

    @property
    def my(self) -> np.ndarray:
        return self.sy / self.S

    @property
    def mz(self) -> np.ndarray:
        return self.sz / self.S

    def spin(self, axis: Axis | str) -> np.ndarray:
        return {Axis.X: self.sx, Axis.Y: self.sy, Axis.Z: self.sz}[Axis(axis)]

    def reduced(self, axis: Axis | str) -> np.ndarray:
        """Reduced magnetization operator S_axis / S."""
        return self.spin(axis) / self.S


def build_collective_operators(N: int) -> CollectiveSpinOps:
    """Build the collective spin operators for ``N`` spin-1/2 particles.

    Off-diagonal elements follow
    ``<m|S_x|n> = 1/2 sqrt(S(S+1) - m n) (delta_{m,n+1} + delta_{m,n-1})``.
    """
    if int(N) != N or N < 1:
        raise ValueError(f"particle count must be a positive integer, got {N!r}")
    N = int(N)
    S = N / 2.0
    dim = N + 1
    m = S - np.arange(dim, dtype=float)
    # <m+1|S_+|m> with m = m[k+1] sits at row k, column k+1
    lower = m[1:]
    splus = np.sqrt(S * (S + 1.0) - lower * (lower + 1.0))
    jp = np.diag(splus, k=1).astype(complex)
    jm = jp.conj().T
    sx = 0.5 * (jp + jm)
    sy = -0.5j * (jp - jm)
    sz = np.diag(m).astype(complex)
    return CollectiveSpinOps(N=N, S=S, dim=dim, sx=_frozen(sx), sy=_frozen(sy), sz=_frozen(sz))


def coherent_state(ops: CollectiveSpinOps, theta: float, phi: float) -> np.ndarray:
    """Spin coherent state pointing along (sin t cos p, sin t sin p, cos t).

    Amplitude on |m> is sqrt(C(2S, S+m)) (e^{i phi} sin(theta/2))^{S-m}
    (cos(theta/2))^{S+m}, evaluated in log space so large S does not
    overflow the binomial.
    """
    if not 0.0 <= theta <= np.pi:
        raise ValueError(f"theta must lie in [0, pi], got {theta}")
    if not -np.pi <= phi < np.pi:
        raise ValueError(f"phi must lie in [-pi, pi), got {phi}")
    n2 = ops.dim - 1  # 2S
    k = np.arange(ops.dim, dtype=float)  # S - m
    log_binom = gammaln(n2 + 1.0) - gammaln(k + 1.0) - gammaln(n2 - k + 1.0)
    log_mag = 0.5 * log_binom + xlogy(k, np.sin(theta / 2.0)) + xlogy(n2 - k, np.cos(theta / 2.0))
    psi = np.exp(log_mag) * np.exp(1j * k * phi)
    return psi / np.linalg.norm(psi)


def _check_dims(vec_or_mat: np.ndarray, op: np.ndarray) -> None:
    if op.ndim != 2 or op.shape[0] != op.shape[1]:
        raise ValueError(f"operator must be square, got shape {op.shape}")
    if vec_or_mat.shape[0] != op.shape[0]:
        raise ValueError(
            f"dimension mismatch: state has dim {vec_or_mat.shape[0]}, operator {op.shape[0]}"
        )


def _real_part(value: complex) -> float:
    if abs(value.imag) > 1e-10 * max(1.0, abs(value.real)):
        raise ValueError(f"expectation value has imaginary residue {value.imag:.3e}; operator not Hermitian?")
    return float(value.real)


def expectation(state: np.ndarray, op: np.ndarray) -> float:
    """<psi|O|psi> for a normalized pure state and Hermitian O."""
    _check_dims(state, op)
    return _real_part(np.vdot(state, op @ state))


def expectation_density(rho: np.ndarray, op: np.ndarray) -> float:
    """tr(rho O) for a density matrix."""
    _check_dims(rho, op)
    # tr(rho O) = sum_ij rho_ij O_ji
    return _real_part(np.sum(rho * op.T))


def connected_correlator(
    state: np.ndarray, ops: CollectiveSpinOps, alpha: Axis | str, beta: Axis | str
) -> float:
    """<m_a m_b + m_b m_a> - 2 <m_a><m_b> on a pure state."""
    a = ops.reduced(alpha)
    b = ops.reduced(beta)
    _check_dims(state, a)
    anti = expectation(state, a @ b + b @ a)
    return anti - 2.0 * expectation(state, a) * expectation(state, b)


def write_operator_csv(path: str | Path, matrix: np.ndarray) -> None:
    """Dump a matrix row-major, one row per line, complex entries as a+bj."""
    rows = [
        ",".join(f"{z.real:.17g}{z.imag:+.17g}j" for z in row) for row in np.asarray(matrix, dtype=complex)
    ]
    Path(path).write_text(CSV_HEADER + "\n" + "\n".join(rows) + "\n")


def read_operator_csv(path: str | Path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    return np.array([[complex(tok) for tok in ln.split(",")] for ln in lines])
