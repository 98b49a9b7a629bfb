"""Per-kernel micro-batch optimizer under a per-kernel workspace limit.

The table is filled bottom-up: ``T(b) = min over admissible b_mu of
T_mu(b_mu) + T(b - b_mu)`` with ``T(0) = 0``, where ``T_mu`` is the fastest
single invocation fitting the limit.
"""

from __future__ import annotations

import functools
import math
import sys
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

from .costs import BatchSizePolicy, CostProvider, enumerate_micro_batches
from .domain import Configuration, KernelDescriptor, MicroConfiguration


class InfeasibleError(Exception):
    """No selection fits the workspace limit."""


@dataclass(frozen=True)
class _Entry:
    time: int  # in units of 1/denom microseconds
    count: int
    split: int  # micro-batch size chosen for the first part
    micro: Optional[MicroConfiguration]
    key: tuple  # canonical (-micro_batch, algorithm id) multiset, sorted


_EMPTY = _Entry(0, 0, 0, None, ())


def _insert(key: tuple, item: tuple) -> tuple:
    lo, hi = 0, len(key)
    while lo < hi:
        mid = (lo + hi) // 2
        if key[mid] <= item:
            lo = mid + 1
        else:
            hi = mid
    return key[:lo] + (item,) + key[lo:]


def _better(cand: _Entry, best: Optional[_Entry]) -> bool:
    if best is None:
        return True
    if (cand.time, cand.count) != (best.time, best.count):
        return (cand.time, cand.count) < (best.time, best.count)
    return cand.key < best.key


class DpTable:
    """Best time, configuration and chosen split for every b in ``0..B``.

    ``entries[b]`` is ``None`` where no composition of ``b`` fits.
    """

    def __init__(self, kernel: KernelDescriptor, B: int, M: int,
                 policy: BatchSizePolicy, fastest: dict[int, Optional[MicroConfiguration]],
                 entries: list[Optional[_Entry]], denom: int = 1):
        self.kernel = kernel
        self.B = B
        self.M = M
        self.policy = policy
        self.fastest = fastest
        self.entries = entries
        self.denom = denom

    def best_time(self, b: int) -> Optional[Fraction]:
        e = self.entries[b]
        return None if e is None else Fraction(e.time, self.denom)

    def split(self, b: int) -> Optional[int]:
        e = self.entries[b]
        return None if e is None else e.split

    def best_config(self, b: int) -> Optional[Configuration]:
        if b == 0:
            return None
        if self.entries[b] is None:
            return None
        micros = []
        while b > 0:
            e = self.entries[b]
            micros.append(e.micro)
            b -= e.split
        return Configuration(micros)

    def summary(self) -> list[tuple]:
        """Comparable snapshot: (time, count, key) per b."""
        return [None if e is None else (Fraction(e.time, self.denom), e.count, e.key)
                for e in self.entries]


def fastest_table(provider: CostProvider, k: KernelDescriptor, B: int, M: int,
                  policy: BatchSizePolicy) -> dict[int, Optional[MicroConfiguration]]:
    return {b: provider.fastest_micro_config(k, b, M) for b in enumerate_micro_batches(policy, B)}


def _scaled(fastest: dict[int, Optional[MicroConfiguration]]) -> tuple[int, dict[int, int]]:
    denom = 1
    for m in fastest.values():
        if m is not None:
            denom = math.lcm(denom, m.time.denominator)
    return denom, {b: int(m.time * denom) for b, m in fastest.items() if m is not None}


def _combine(fast: MicroConfiguration, t_mu: int, b_mu: int, rest: Optional[_Entry]) -> Optional[_Entry]:
    if rest is None:
        return None
    return _Entry(t_mu + rest.time, rest.count + 1, b_mu, fast,
                  _insert(rest.key, (-b_mu, fast.algorithm.id)))


def wr_table(provider: CostProvider, k: KernelDescriptor, B: int, M: int,
             policy: BatchSizePolicy = BatchSizePolicy.All) -> DpTable:
    if B < 1:
        raise ValueError("mini-batch size must be >= 1")
    if M < 0:
        raise ValueError("workspace limit must be non-negative")
    fastest = fastest_table(provider, k, B, M, policy)
    denom, itime = _scaled(fastest)
    admissible = sorted(itime)
    entries: list[Optional[_Entry]] = [_EMPTY] + [None] * B
    for b in range(1, B + 1):
        best = None
        for b_mu in admissible:
            if b_mu > b:
                break
            rest = entries[b - b_mu]
            if rest is None:
                continue
            t = itime[b_mu] + rest.time
            if best is not None and (t, rest.count + 1) > (best.time, best.count):
                continue
            cand = _combine(fastest[b_mu], itime[b_mu], b_mu, rest)
            if _better(cand, best):
                best = cand
        entries[b] = best
    return DpTable(k, B, M, policy, fastest, entries, denom)


def wr_table_top_down(provider: CostProvider, k: KernelDescriptor, B: int, M: int,
                      policy: BatchSizePolicy = BatchSizePolicy.All) -> DpTable:
    """Memoized recursive evaluation of the same recurrence."""
    fastest = fastest_table(provider, k, B, M, policy)
    denom, itime = _scaled(fastest)
    admissible = sorted(itime)

    @functools.lru_cache(maxsize=None)
    def solve(b: int) -> Optional[_Entry]:
        if b == 0:
            return _EMPTY
        best = None
        for b_mu in admissible:
            if b_mu > b:
                break
            cand = _combine(fastest[b_mu], itime[b_mu], b_mu, solve(b - b_mu))
            if cand is not None and _better(cand, best):
                best = cand
        return best

    limit = sys.getrecursionlimit()
    sys.setrecursionlimit(max(limit, 4 * B + 100))
    try:
        for b in range(B + 1):
            solve(b)
        entries = [solve(b) for b in range(B + 1)]
    finally:
        sys.setrecursionlimit(limit)
    return DpTable(k, B, M, policy, fastest, entries, denom)


def wr_optimize(provider: CostProvider, k: KernelDescriptor, B: int, M: int,
                policy: BatchSizePolicy = BatchSizePolicy.All) -> tuple[Configuration, Fraction]:
    """Fastest division of a ``B``-sample mini-batch using at most ``M`` bytes.

    Among equally fast configurations the one with fewer micro-batches wins,
    then the lexicographically smaller canonical configuration.
    """
    table = wr_table(provider, k, B, M, policy)
    config = table.best_config(B)
    if config is None:
        raise InfeasibleError(
            f"no feasible configuration for {k.describe()} within {M} bytes "
            f"(batch {B}, policy {policy.value})")
    return config, table.best_time(B)
