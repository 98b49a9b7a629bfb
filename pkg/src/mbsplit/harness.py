"""Whole-network optimization runs producing :class:`OptimizationReport`."""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from typing import Optional

from .costs import BatchSizePolicy, CostModel, CostProvider, parse_bytes
from .network import NetworkDescription
from .report import KernelRow, OptimizationReport
from .wd import wd_optimize
from .wr import InfeasibleError, wr_optimize


def resolve_limit(spec: str | int, model: Optional[CostModel], mode: str, n_kernels: int) -> int:
    """Turn a tier name or byte size into the byte limit for ``mode``.

    A tier names a per-kernel size; in ``wd`` mode it is multiplied by the
    kernel count so the total matches the equivalent ``wr`` run.
    """
    if isinstance(spec, int):
        return spec
    tiers = model.tiers if model is not None else {}
    if spec in tiers:
        per_kernel = tiers[spec]
        return per_kernel * n_kernels if mode == "wd" else per_kernel
    return parse_bytes(spec)


def _wr_rows(provider, kernels, B, limit, policy, jobs):
    def one(k):
        return wr_optimize(provider, k, B, limit, policy)[0]

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, kernels))
    return [one(k) for k in kernels]


def run_optimization(network: NetworkDescription, provider: CostProvider, mode: str,
                     policy: BatchSizePolicy, limit: int, batch: Optional[int] = None,
                     jobs: int = 1) -> OptimizationReport:
    """Optimize every kernel of ``network`` and attach the undivided baseline.

    The baseline runs the same mode and budget with the ``undivided`` policy;
    it is ``None`` per kernel where that is infeasible.
    """
    B = network.mini_batch if batch is None else batch
    kernels = network.kernels(B)
    start = time.perf_counter()
    if mode == "wr":
        configs = _wr_rows(provider, kernels, B, limit, policy, jobs)
    elif mode == "wd":
        configs = wd_optimize(provider, kernels, B, limit, policy, jobs=jobs).selected
    else:
        raise ValueError(f"unknown mode {mode!r}")
    wall = time.perf_counter() - start

    undivided = BatchSizePolicy.Undivided
    try:
        if policy is undivided:
            baseline = list(configs)
        elif mode == "wr":
            baseline = _wr_rows(provider, kernels, B, limit, undivided, jobs)
        else:
            baseline = wd_optimize(provider, kernels, B, limit, undivided, jobs=jobs).selected
    except InfeasibleError:
        baseline = [None] * len(kernels)

    rows = [KernelRow(k, c, b) for k, c, b in zip(kernels, configs, baseline)]
    report = OptimizationReport(mode=mode, policy=policy.value, network=network.name,
                                batch_size=B, workspace_limit=limit, rows=rows, wall_time=wall)
    report.check()
    return report
