"""Seed-addressed Gaussian noise streams.

Each trajectory owns a Philox counter-based generator keyed by
``(base_seed, trajectory_index)``, so a stream can be rebuilt in
isolation and streams for different indices share no sequential state.
Replaying the same key yields the same sequence regardless of which
worker draws it or in what order trajectories are scheduled.
"""

from __future__ import annotations

import numpy as np

NOISE_ALGORITHM = "numpy-philox4x64-key(base_seed,index)/standard_normal"
OUTCOME_ALGORITHM = "numpy-pcg64-seedsequence(seed,[index,1])/random"

_MASK64 = (1 << 64) - 1


def _check_seed(base_seed: int, trajectory_index: int) -> None:
    if not 0 <= base_seed <= _MASK64:
        raise ValueError(f"base_seed must fit in 64 bits, got {base_seed}")
    if not 0 <= trajectory_index <= _MASK64:
        raise ValueError(f"trajectory_index must be a non-negative 64-bit integer, got {trajectory_index}")


class NoiseStream:
    """Stream of i.i.d. Wiener increments for one trajectory.

    >>> a = NoiseStream(7, 3).increments(4, dt=1e-3)
    >>> b = NoiseStream(7, 3).increments(4, dt=1e-3)
    >>> bool((a == b).all())
    True
    """

    algorithm = NOISE_ALGORITHM

    def __init__(self, base_seed: int, trajectory_index: int = 0):
        _check_seed(base_seed, trajectory_index)
        self.base_seed = int(base_seed)
        self.trajectory_index = int(trajectory_index)
        key = np.array([self.trajectory_index, self.base_seed], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))
        self.consumed = 0

    def normals(self, n: int, out: np.ndarray | None = None) -> np.ndarray:
        """Next ``n`` standard normal variates."""
        if out is None:
            out = np.empty(n)
        self._gen.standard_normal(n, out=out[:n])
        self.consumed += n
        return out[:n]

    def increments(self, n: int, dt: float) -> np.ndarray:
        """Next ``n`` Wiener increments with variance ``dt``."""
        return np.sqrt(dt) * self.normals(n)

    def replay(self) -> NoiseStream:
        """Fresh stream with the same key, positioned at the start."""
        return NoiseStream(self.base_seed, self.trajectory_index)

    def __repr__(self) -> str:
        return f"NoiseStream(base_seed={self.base_seed}, trajectory_index={self.trajectory_index}, consumed={self.consumed})"


def outcome_generator(seed: int, trajectory_index: int = 0) -> np.random.Generator:
    """Uniform stream for discrete ancilla outcomes; disjoint from NoiseStream."""
    _check_seed(seed, trajectory_index)
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(trajectory_index, 1))))


class BlockNoise:
    """Draw aligned noise blocks for many trajectories at once.

    Row ``i`` of every block comes from ``NoiseStream(base_seed,
    indices[i])``; inactive rows are skipped and do not advance their
    stream, which is harmless because an inactive trajectory never needs
    more noise.
    """

    def __init__(self, base_seed: int, indices):
        self.indices = np.asarray(indices, dtype=np.int64)
        self.streams = [NoiseStream(base_seed, int(i)) for i in self.indices]

    def __len__(self) -> int:
        return len(self.streams)

    def normals(self, n: int, active: np.ndarray | None = None) -> np.ndarray:
        out = np.zeros((len(self.streams), n))
        for i, stream in enumerate(self.streams):
            if active is None or active[i]:
                stream.normals(n, out=out[i])
        return out
