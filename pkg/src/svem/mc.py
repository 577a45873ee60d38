"""Monte Carlo reference: one full-order SPD solve per accepted sample."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .linalg import NotPositiveDefiniteError
from .random_field import SampleBatch
from .svee import SeparatedSystem


@dataclass(frozen=True, eq=False)
class MCSolution:
    count: int
    mean: np.ndarray  # (n,)
    m2: np.ndarray  # (n,) sum of squared deviations
    probes: np.ndarray  # probe DoF indices
    probe_samples: np.ndarray  # (count, n_probes)
    samples: np.ndarray | None = None  # (count, n) in full mode
    failed: tuple[int, ...] = ()  # batch row indices whose solve failed

    @property
    def variance(self) -> np.ndarray:
        return self.m2 / self.count if self.count else np.zeros_like(self.m2)

    @property
    def std(self) -> np.ndarray:
        return np.sqrt(self.variance)


def _merge(a, b):
    """Chan et al. pairwise combination of (count, mean, M2)."""
    na, ma, sa = a
    nb, mb, sb = b
    if na == 0:
        return b
    if nb == 0:
        return a
    n = na + nb
    delta = mb - ma
    return n, ma + delta * (nb / n), sa + sb + delta**2 * (na * nb / n)


def _solve_chunk(system: SeparatedSystem, rows: np.ndarray, index: np.ndarray, keep_full: bool, rtol: float, block: int = 32):
    chol = system.factorizer()
    xi = system.xi(rows)
    eta = system.eta(rows)
    U = np.empty((len(rows), system.n_free))
    ok = np.ones(len(rows), dtype=bool)
    for b0 in range(0, len(rows), block):
        vals = system.free_values(xi[b0 : b0 + block])
        for j, v in enumerate(vals):
            s = b0 + j
            try:
                chol.factor_lower(system.lower_of(v))
            except NotPositiveDefiniteError:
                ok[s] = False
                continue
            K = system.free_matrix(v)
            F = eta[s] @ system.F_free
            u = chol.solve(F)
            # one refinement step keeps the residual well under the target
            u = u + chol.solve(F - K @ u)
            nf = np.linalg.norm(F)
            if nf > 0 and np.linalg.norm(F - K @ u) > rtol * nf:
                ok[s] = False
                continue
            U[s] = u
    U = U[ok]
    n = len(U)
    if n:
        # shift by the first sample so identical samples give exactly zero spread
        dev = U - U[0]
        shift = dev.mean(axis=0)
        mean = U[0] + shift
        m2 = ((dev - shift) ** 2).sum(axis=0)
    else:
        mean = np.zeros(system.n_free)
        m2 = np.zeros(system.n_free)
    return (n, mean, m2), U if keep_full else None, U, index[~ok]


def run_mcs(
    system: SeparatedSystem,
    batch: SampleBatch,
    probes=(),
    mode: str = "full",
    chunk: int = 256,
    threads: int = 1,
    rtol: float = 1e-10,
) -> MCSolution:
    """Solve every accepted sample.

    Samples are processed in fixed chunks whose statistics are merged in chunk
    order, so results do not depend on ``threads``.

    Args:
        system: separated system.
        batch: sample batch; only accepted samples are solved.
        probes: DoF indices whose sample histories are kept.
        mode: ``"full"`` keeps every solution sample; ``"streaming"`` keeps only
            mean, second moment and probe histories.
        chunk: samples per chunk.
        threads: worker threads (each owns its own factorization workspace).
        rtol: residual tolerance; samples failing it are recorded and skipped.
    """
    if mode not in ("full", "streaming"):
        raise ValueError(f"unknown mode {mode!r}")
    idx = np.flatnonzero(batch.mask)
    if idx.size == 0:
        raise ValueError("no accepted samples")
    probes = np.asarray(probes, dtype=np.int64).reshape(-1)
    rows = batch.values[idx]
    chunks = [(rows[s : s + chunk], idx[s : s + chunk]) for s in range(0, len(idx), chunk)]
    keep = mode == "full"

    def work(c):
        return _solve_chunk(system, c[0], c[1], keep, rtol)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, chunks))
    else:
        results = [work(c) for c in chunks]

    acc = (0, np.zeros(system.n_free), np.zeros(system.n_free))
    full, probe_hist, failed = [], [], []
    for stats, U_keep, U, bad in results:
        acc = _merge(acc, stats)
        if keep:
            full.append(U_keep)
        probe_hist.append(system.expand(U)[:, probes] if probes.size else np.zeros((len(U), 0)))
        failed.extend(int(b) for b in bad)
    count, mean_f, m2_f = acc
    if count == 0:
        raise RuntimeError("every Monte Carlo sample failed")
    samples = system.expand(np.vstack(full)) if keep else None
    return MCSolution(
        count=int(count),
        mean=system.expand(mean_f),
        m2=system.expand(m2_f),
        probes=probes,
        probe_samples=np.vstack(probe_hist),
        samples=samples,
        failed=tuple(failed),
    )
