"""Exhaustive reference solvers and random small instances.

The enumerators here only use raw :func:`query_cost` records, never the
optimizers' own candidate filtering, so they stay independent of the code
they check.
"""

from __future__ import annotations

import itertools
import random
from fractions import Fraction
from typing import Iterator, Optional, Sequence

from .costs import (
    AlgorithmParams,
    BatchSizePolicy,
    CostModel,
    CostProvider,
    CostRecord,
    enumerate_micro_batches,
    query_cost,
)
from .domain import AlgorithmId, Configuration, KernelDescriptor, MicroConfiguration, OpType

MAX_BATCH = 16
MAX_KERNELS = 4
MAX_ALGORITHMS = 3


class OracleBoundsError(ValueError):
    pass


def check_bounds(B: int, kernels: int = 1, algorithms: int = 1) -> None:
    if B > MAX_BATCH or kernels > MAX_KERNELS or algorithms > MAX_ALGORITHMS:
        raise OracleBoundsError(
            f"instance too large for exhaustive search: batch {B} (max {MAX_BATCH}), "
            f"kernels {kernels} (max {MAX_KERNELS}), algorithms {algorithms} (max {MAX_ALGORITHMS})")


def partitions(n: int, parts: Sequence[int]) -> Iterator[tuple[int, ...]]:
    """Multisets of ``parts`` summing to ``n``, as non-increasing tuples."""
    parts = sorted(set(parts), reverse=True)

    def rec(rem: int, start: int) -> Iterator[tuple[int, ...]]:
        if rem == 0:
            yield ()
            return
        for i in range(start, len(parts)):
            p = parts[i]
            if p <= rem:
                for tail in rec(rem - p, i):
                    yield (p,) + tail

    return rec(n, 0)


def _fitting(model: CostModel, k: KernelDescriptor, b: int, M: int) -> list[MicroConfiguration]:
    out = []
    for a in model.catalog:
        r = query_cost(model, k, a, b)
        if r.feasible and r.workspace <= M:
            out.append(MicroConfiguration(r.algorithm, b, r.time, r.workspace))
    return out


def brute_wr(model: CostModel, k: KernelDescriptor, B: int, M: int,
             policy: BatchSizePolicy = BatchSizePolicy.All) -> Optional[Fraction]:
    """Minimum total time over every multiset of admissible parts summing to ``B``.

    For a fixed multiset of parts the per-part algorithm choices are
    independent, so each part takes its own fastest fitting algorithm.
    """
    sizes = enumerate_micro_batches(policy, B)
    best_part = {}
    for b in sizes:
        fits = _fitting(model, k, b, M)
        best_part[b] = min((m.time for m in fits), default=None)
    best = None
    for parts in partitions(B, sizes):
        if any(best_part[p] is None for p in parts):
            continue
        t = sum((best_part[p] for p in parts), Fraction(0))
        if best is None or t < best:
            best = t
    return best


def all_configurations(model: CostModel, k: KernelDescriptor, B: int, M: int,
                       policy: BatchSizePolicy = BatchSizePolicy.All) -> list[Configuration]:
    """Every distinct configuration of ``B`` whose micro-configurations fit ``M``."""
    sizes = enumerate_micro_batches(policy, B)
    fits = {b: _fitting(model, k, b, M) for b in sizes}
    out = []
    for parts in partitions(B, sizes):
        groups = [(p, sum(1 for q in parts if q == p)) for p in sorted(set(parts), reverse=True)]
        per_group = []
        for p, count in groups:
            per_group.append(list(itertools.combinations_with_replacement(fits[p], count)))
        for combo in itertools.product(*per_group):
            micros = [m for group in combo for m in group]
            if micros:
                out.append(Configuration(micros))
    return out


def brute_choice(choice_sets: Sequence[Sequence[Configuration]], budget: Optional[int]) -> Optional[Fraction]:
    """Cross-product optimum of the one-per-kernel selection.

    Partial selections with the same total workspace are merged keeping the
    faster one, which is exact for an additive objective.
    """
    states: dict[int, Fraction] = {0: Fraction(0)}
    for s in choice_sets:
        nxt: dict[int, Fraction] = {}
        for ws, t in states.items():
            for c in s:
                w = ws + c.workspace
                if budget is not None and w > budget:
                    continue
                tt = t + c.time
                if w not in nxt or tt < nxt[w]:
                    nxt[w] = tt
        states = nxt
        if not states:
            return None
    return min(states.values())


def brute_choice_product(choice_sets: Sequence[Sequence[Configuration]], budget: Optional[int]) -> Optional[Fraction]:
    """Plain ``itertools.product`` over every selection."""
    best = None
    for combo in itertools.product(*choice_sets):
        if budget is not None and sum(c.workspace for c in combo) > budget:
            continue
        t = sum((c.time for c in combo), Fraction(0))
        if best is None or t < best:
            best = t
    return best


# -- random instances ----------------------------------------------------------

def toy_kernel(i: int = 0, batch: int = 16, op: OpType = OpType.Forward) -> KernelDescriptor:
    """Distinct small kernels (different hash per ``i``) for unit-scale models."""
    return KernelDescriptor(op, batch, 1 + i, 3, 3, 1, 1, 1, layer_name=f"toy{i}")


def random_model(rng: random.Random, n_algorithms: int = 3) -> CostModel:
    params = []
    for i in range(n_algorithms):
        params.append(AlgorithmParams(
            algorithm=AlgorithmId(i, f"A{i}"),
            time_per_sample=Fraction(rng.randint(1, 12), rng.randint(1, 4)),
            time_setup=Fraction(rng.randint(0, 6), rng.randint(1, 2)),
            ws_per_sample=rng.randint(0, 12),
            ws_fixed=rng.randint(0, 20),
            min_batch=1 if i == 0 else rng.randint(1, 3),
            quantum=rng.randint(1, 4),
        ))
    return CostModel.from_params(params, shape_scaling=False)


class MultiModelProvider(CostProvider):
    """Provider that routes each kernel hash to its own model.

    Algorithms missing from a kernel's model are reported infeasible.
    """

    def __init__(self, models: dict[int, CostModel]):
        catalog = {}
        for m in models.values():
            for a in m.catalog:
                catalog.setdefault(a.id, a)
        super().__init__(model=next(iter(models.values())), catalog=catalog.values())
        self.models = models

    def cost(self, k, a, b):
        aid = a.id if isinstance(a, AlgorithmId) else a
        model = self.models[k.canonical_hash()]
        if aid not in model.algorithms:
            return CostRecord(k.canonical_hash(), k.op_type, AlgorithmId(aid), b, None, None, False)
        return query_cost(model, k, aid, b)


def budget_range(model: CostModel, B: int) -> tuple[int, int]:
    """Smallest budget that admits any configuration, and one that admits all."""
    lo = min(p.ws_fixed + p.ws_per_sample for p in model.algorithms.values() if p.min_batch == 1)
    hi = max(p.ws_fixed + p.ws_per_sample * B for p in model.algorithms.values())
    return lo, hi


def random_budget(rng: random.Random, models: Sequence[CostModel], B: int) -> int:
    """Mostly feasible budgets; about one draw in ten lands just below feasibility."""
    lo = sum(budget_range(m, B)[0] for m in models)
    hi = sum(budget_range(m, B)[1] for m in models)
    if lo > 0 and rng.random() < 0.1:
        return rng.randint(max(0, lo - 5), lo - 1)
    return rng.randint(lo, hi + 1)


# -- comparison drivers used by the CLI and the acceptance suite ---------------

def wr_trial(seed: int, max_batch: int = MAX_BATCH, n_algorithms: int = MAX_ALGORITHMS,
             policy: BatchSizePolicy = BatchSizePolicy.All) -> tuple[bool, Optional[Fraction], Optional[Fraction]]:
    from .wr import InfeasibleError, wr_optimize

    check_bounds(max_batch, 1, n_algorithms)
    rng = random.Random(seed)
    model = random_model(rng, rng.randint(1, n_algorithms))
    B = rng.randint(1, max_batch)
    M = random_budget(rng, [model], B)
    k = toy_kernel(0, B)
    expected = brute_wr(model, k, B, M, policy)
    try:
        _, got = wr_optimize(CostProvider(model), k, B, M, policy)
    except InfeasibleError:
        got = None
    return expected == got, expected, got


def wd_trial(seed: int, max_batch: int = 8, max_kernels: int = 3, n_algorithms: int = MAX_ALGORITHMS,
             policy: BatchSizePolicy = BatchSizePolicy.All) -> tuple[bool, Optional[Fraction], Optional[Fraction], Optional[Fraction]]:
    """Pruned optimum vs unpruned optimum vs exhaustive cross product."""
    from .wd import ChoiceProblem, ilp_solve, wd_optimize
    from .wr import InfeasibleError

    check_bounds(max_batch, max_kernels, n_algorithms)
    rng = random.Random(seed)
    n = rng.randint(1, max_kernels)
    B = rng.randint(1, max_batch)
    kernels = [toy_kernel(i, B) for i in range(n)]
    models = {k.canonical_hash(): random_model(rng, rng.randint(1, n_algorithms)) for k in kernels}
    M = random_budget(rng, list(models.values()), B)
    full = [all_configurations(models[k.canonical_hash()], k, B, M, policy) for k in kernels]
    exhaustive = brute_choice(full, M)
    full_opt = None
    if all(full):
        try:
            full_opt = ilp_solve(ChoiceProblem(kernels, full, M)).total_time
        except InfeasibleError:
            full_opt = None
    try:
        pruned_opt = wd_optimize(MultiModelProvider(models), kernels, B, M, policy).total_time
    except InfeasibleError:
        pruned_opt = None
    ok = exhaustive == full_opt == pruned_opt
    return ok, exhaustive, full_opt, pruned_opt
