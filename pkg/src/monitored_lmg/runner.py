"""Worker-count independent ensemble orchestration.

Trajectory indices are cut into fixed-size chunks whose boundaries depend
only on the ensemble size, never on the number of workers.  Each chunk is
a self-contained batch with its own noise streams, and results are
concatenated in index order, so outputs are bit-identical for any pool
size.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor

import numpy as np

from .monitored_quantum import ModelSpec, SSEEnsemble, sse_ensemble
from .semiclassical import PhasePoint, SemiclassicalEnsemble, simulate_ensemble

CHUNK = 256


def chunks(M: int, size: int = CHUNK, start: int = 0) -> list[np.ndarray]:
    return [np.arange(start + a, start + min(a + size, M)) for a in range(0, M, size)]


def _map(fn, jobs, workers: int):
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _semi_job(args):
    initial, h, gamma, t_final, dt, seed, idx, dt_record = args
    return simulate_ensemble(initial, h, gamma, t_final, dt, seed, idx, dt_record=dt_record)


def run_semiclassical(
    initial: PhasePoint, h, gamma, t_final, dt, base_seed, M, dt_record=None, workers=1, chunk=CHUNK
) -> SemiclassicalEnsemble:
    jobs = [(initial, h, gamma, t_final, dt, base_seed, idx, dt_record) for idx in chunks(M, chunk)]
    parts = _map(_semi_job, jobs, workers)
    first = parts[0]
    return SemiclassicalEnsemble(
        t=first.t,
        indices=np.concatenate([p.indices for p in parts]),
        mz=np.concatenate([p.mz for p in parts]),
        phi=np.concatenate([p.phi for p in parts]),
        status=np.concatenate([p.status for p in parts]),
        t_absorbed=np.concatenate([p.t_absorbed for p in parts]),
        base_seed=first.base_seed, h=first.h, gamma=first.gamma, dt=first.dt,
    )


def _sse_job(args):
    N, h, gamma, initial, t_final, dt, seed, idx, dt_record, method = args
    return sse_ensemble(ModelSpec(N, h, gamma), initial, t_final, dt, seed, idx, dt_record=dt_record, method=method)


def run_sse(
    model: ModelSpec, initial, t_final, dt, base_seed, M, dt_record, method="split", workers=1, chunk=CHUNK
) -> SSEEnsemble:
    jobs = [(model.N, model.h, model.gamma, initial, t_final, dt, base_seed, idx, dt_record, method)
            for idx in chunks(M, chunk)]
    parts = _map(_sse_job, jobs, workers)
    cat = {k: np.concatenate([getattr(p, k) for p in parts]) for k in ("indices", "mx", "my", "mz", "mz2", "norm_drift")}
    return SSEEnsemble(t=parts[0].t, base_seed=parts[0].base_seed, **cat)
