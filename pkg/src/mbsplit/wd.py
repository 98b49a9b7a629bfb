"""Network-wide workspace division.

Each kernel gets a Pareto front of configurations in (time, workspace)
space; one configuration per kernel is then chosen by an exact
branch-and-bound over the resulting multiple-choice knapsack.
"""

from __future__ import annotations

import bisect
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Optional, Sequence, TypeVar

from .costs import BatchSizePolicy, CostProvider, enumerate_micro_batches
from .domain import Configuration, KernelDescriptor, MicroConfiguration
from .wr import InfeasibleError

DEFAULT_FRONT_CAP = 4096

P = TypeVar("P")


class FrontTooLargeError(RuntimeError):
    pass


def pareto_front(points: Iterable[P], time: Callable[[P], object], workspace: Callable[[P], int],
                 tiebreak: Callable[[P], object] = lambda p: 0) -> list[P]:
    """Undominated points, workspace ascending (so time strictly descending).

    A point is dropped when another one is no slower and needs no more
    workspace; among exact duplicates the one with the smallest ``tiebreak``
    survives.
    """
    ordered = sorted(points, key=lambda p: (workspace(p), time(p), tiebreak(p)))
    front: list[P] = []
    for p in ordered:
        if not front or time(p) < time(front[-1]):
            front.append(p)
    return front


def desirable_set(configs: Iterable[Configuration]) -> list[Configuration]:
    return pareto_front(configs, lambda c: c.time, lambda c: c.workspace, Configuration.key)


@dataclass
class ConfigurationSet:
    kernel: Optional[KernelDescriptor]
    members: list[Configuration]

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def points(self) -> list[tuple[Fraction, int]]:
        return [(c.time, c.workspace) for c in self.members]


# -- front recurrence ---------------------------------------------------------

class _FrontBuilder:
    """Bottom-up fronts C(0..B) for one kernel, in integer time units.

    Entries are ``(workspace, time, b_mu, micro_index, prev_index)``; a
    configuration is recovered by following ``prev_index`` into the front of
    ``b - b_mu``.
    """

    def __init__(self, provider: CostProvider, k: KernelDescriptor, B: int, M: int,
                 policy: BatchSizePolicy, cap: int):
        self.k = k
        self.B = B
        self.cap = cap
        self.micros: dict[int, list[MicroConfiguration]] = {}
        for b_mu in enumerate_micro_batches(policy, B):
            ms = provider.micro_config_set(k, b_mu, M)
            if ms:
                self.micros[b_mu] = ms
        denom = 1
        for ms in self.micros.values():
            for m in ms:
                denom = math.lcm(denom, m.time.denominator)
        self.denom = denom
        self.itimes = {b_mu: [int(m.time * denom) for m in ms] for b_mu, ms in self.micros.items()}
        self.fronts: list[list[tuple]] = [[(0, 0, 0, -1, -1)]]
        self.front_ws: list[list[int]] = [[0]]
        self.max_front = 1
        for b in range(1, B + 1):
            front = self._step(b)
            self.fronts.append(front)
            self.front_ws.append([e[0] for e in front])

    def signature(self) -> tuple:
        """Everything the fronts depend on; equal signatures give equal fronts."""
        return _signature(self.micros)

    def _step(self, b: int) -> list[tuple]:
        cands: list[tuple] = []
        for b_mu, ms in self.micros.items():
            if b_mu > b:
                continue
            prev = self.fronts[b - b_mu]
            if not prev:
                continue
            prev_ws = self.front_ws[b - b_mu]
            n_prev = len(prev)
            for mi, m in enumerate(ms):
                tm = self.itimes[b_mu][mi]
                wm = m.workspace
                # among predecessors fitting under wm only the fastest matters
                j = bisect.bisect_right(prev_ws, wm) - 1
                if j >= 0:
                    cands.append((wm, tm + prev[j][1], b_mu, mi, j))
                if j + 1 < n_prev:
                    cands.extend([(prev[idx][0], tm + prev[idx][1], b_mu, mi, idx)
                                  for idx in range(j + 1, n_prev)])
        cands.sort()
        front: list[tuple] = []
        i = 0
        while i < len(cands):
            e = cands[i]
            j = i + 1
            while j < len(cands) and cands[j][0] == e[0] and cands[j][1] == e[1]:
                j += 1
            if not front or e[1] < front[-1][1]:
                if j - i > 1:
                    e = min(cands[i:j], key=lambda c: self._key(b, c))
                front.append(e)
            i = j
        if len(front) > self.cap:
            raise FrontTooLargeError(
                f"{self.k.describe()}: {len(front)} desirable configurations at b={b} "
                f"exceed the cap of {self.cap}")
        self.max_front = max(self.max_front, len(front))
        return front

    def _micros_of(self, b: int, entry: tuple) -> list[MicroConfiguration]:
        out = []
        while b > 0:
            _, _, b_mu, mi, prev = entry
            out.append(self.micros[b_mu][mi])
            b -= b_mu
            entry = self.fronts[b][prev]
        return out

    def _key(self, b: int, entry: tuple) -> tuple:
        return tuple(sorted((-m.micro_batch, m.algorithm.id) for m in self._micros_of(b, entry)))

    def configurations(self, b: int) -> list[Configuration]:
        if b == 0:
            return []
        return [Configuration(self._micros_of(b, e)) for e in self.fronts[b]]


def _signature(micros: dict[int, list[MicroConfiguration]]) -> tuple:
    return tuple((b, tuple((m.algorithm.id, m.time, m.workspace) for m in ms))
                 for b, ms in sorted(micros.items()) if ms)


def config_set(provider: CostProvider, k: KernelDescriptor, b: int, M_total: int,
               policy: BatchSizePolicy = BatchSizePolicy.All,
               cap: int = DEFAULT_FRONT_CAP) -> ConfigurationSet:
    """Desirable configurations covering ``b`` samples, each within ``M_total`` bytes."""
    if b < 1:
        raise ValueError("batch size must be >= 1")
    if M_total < 0:
        raise ValueError("workspace budget must be non-negative")
    builder = _FrontBuilder(provider, k, b, M_total, policy, cap)
    return ConfigurationSet(k, builder.configurations(b))


def _config_set_with_stats(provider, k, b, M_total, policy, cap):
    builder = _FrontBuilder(provider, k, b, M_total, policy, cap)
    return ConfigurationSet(k, builder.configurations(b)), builder.max_front


# -- exact multiple-choice knapsack ---------------------------------------

@dataclass
class ChoiceProblem:
    kernels: list[KernelDescriptor]
    choice_sets: list[Sequence[Configuration]]
    budget: Optional[int]  # None means unbounded

    def __post_init__(self) -> None:
        if len(self.kernels) != len(self.choice_sets):
            raise ValueError("need exactly one choice set per kernel")
        if self.budget is not None and self.budget < 0:
            raise ValueError("budget must be non-negative")

    @property
    def num_variables(self) -> int:
        return sum(len(s) for s in self.choice_sets)


@dataclass
class ChoiceSolution:
    kernels: list[KernelDescriptor]
    selected: list[Configuration]
    indices: list[int]
    total_time: Fraction
    total_workspace: int
    budget: Optional[int]
    nodes: int = 0
    choice_sets: list[Sequence[Configuration]] = field(default_factory=list, repr=False)
    max_front: int = 0

    def check(self) -> None:
        """Assert the one-per-kernel, budget and objective constraints."""
        assert len(self.selected) == len(self.kernels) == len(self.indices)
        assert self.total_time == sum((c.time for c in self.selected), Fraction(0))
        assert self.total_workspace == sum(c.workspace for c in self.selected)
        if self.budget is not None:
            assert self.total_workspace <= self.budget


class ILPInfeasibleError(InfeasibleError):
    def __init__(self, min_workspace: int, budget: int):
        super().__init__(
            f"workspace budget {budget} bytes is below the minimal achievable "
            f"total of {min_workspace} bytes")
        self.min_workspace = min_workspace
        self.budget = budget


def _lower_hull(points: list[tuple[int, int]]) -> list[tuple[int, int]]:
    """Lower convex hull of (workspace, time) points, workspace ascending,
    keeping only the portion where time strictly decreases."""
    pts = sorted(set(points))
    hull: list[tuple[int, int]] = []
    for p in pts:
        if hull and p[1] >= hull[-1][1]:
            continue
        while len(hull) >= 2:
            (x1, y1), (x2, y2) = hull[-2], hull[-1]
            # drop hull[-1] if it lies on or above segment hull[-2] -> p
            if (y2 - y1) * (p[0] - x1) >= (p[1] - y1) * (x2 - x1):
                hull.pop()
            else:
                break
        hull.append(p)
    return hull


def ilp_solve(problem: ChoiceProblem) -> ChoiceSolution:
    """Exact optimum of the one-configuration-per-kernel selection problem.

    Depth-first branch-and-bound over kernels; the bound at each node is the
    linear relaxation of the remaining groups (greedy over lower convex
    hull segments, steepest first).  Exploration order is fixed, and the
    incumbent is only replaced on strict improvement.
    """
    n = len(problem.kernels)
    for i, s in enumerate(problem.choice_sets):
        if len(s) == 0:
            raise ValueError(f"empty choice set for kernel {i}")
    denom = 1
    for s in problem.choice_sets:
        for c in s:
            denom = math.lcm(denom, Fraction(c.time).denominator)
    groups = [[(int(Fraction(c.time) * denom), c.workspace) for c in s] for s in problem.choice_sets]

    min_ws = [min(w for _, w in g) for g in groups]
    total_min = sum(min_ws)
    budget = problem.budget
    if budget is not None and total_min > budget:
        raise ILPInfeasibleError(total_min, budget)
    cap = budget if budget is not None else sum(max(w for _, w in g) for g in groups)

    # branch on high-spread groups first; identical groups end up adjacent
    order = sorted(range(n), key=lambda i: (-(max(t for t, _ in groups[i]) - min(t for t, _ in groups[i])),
                                            groups[i], i))
    og = [groups[i] for i in order]
    # replicated kernels are interchangeable, so their picks can be taken in
    # non-decreasing item order without losing any optimum
    same_as_prev = [d > 0 and og[d] == og[d - 1] for d in range(n)]

    hulls = [_lower_hull([(w, t) for t, w in g]) for g in og]
    segs = []
    for depth, h in enumerate(hulls):
        segs.append([(h[j + 1][0] - h[j][0], h[j + 1][1] - h[j][1], depth, j + 1)
                     for j in range(len(h) - 1)])
    suffix_ws = [0] * (n + 1)
    suffix_t = [0] * (n + 1)
    suffix_segs: list[list[tuple]] = [[] for _ in range(n + 1)]
    for d in range(n - 1, -1, -1):
        suffix_ws[d] = suffix_ws[d + 1] + hulls[d][0][0]
        suffix_t[d] = suffix_t[d + 1] + hulls[d][0][1]
        merged = suffix_segs[d + 1] + segs[d]
        # steepest time decrease per byte first: compare dt/dw via cross-multiplication
        merged.sort(key=_SlopeKey)
        suffix_segs[d] = merged

    def bound(d: int, room: int) -> Optional[int]:
        if suffix_ws[d] > room:
            return None
        r = room - suffix_ws[d]
        t = suffix_t[d]
        for dw, dt, _, _ in suffix_segs[d]:
            if dw <= r:
                t += dt
                r -= dw
            else:
                if r > 0:
                    t -= (-dt * r) // dw  # ceil of a negative fraction
                break
        return t

    # greedy incumbent: the integral prefix of the root relaxation
    pos = [0] * n
    r = cap - suffix_ws[0]
    for dw, dt, d, j in suffix_segs[0]:
        if dw > r:
            break
        pos[d] = j
        r -= dw
    choice = []
    for d in range(n):
        w, t = hulls[d][pos[d]]
        idx = min((i for i, (tt, ww) in enumerate(og[d]) if tt == t and ww == w))
        choice.append(idx)
    best_t = sum(og[d][choice[d]][0] for d in range(n))
    best = list(choice)

    item_order = [sorted(range(len(g)), key=lambda i: (g[i][0], g[i][1], i)) for g in og]
    nodes = 0
    current = [0] * n
    rank = [0] * n

    def dfs(d: int, t_acc: int, room: int) -> None:
        nonlocal best_t, best, nodes
        nodes += 1
        if d == n:
            if t_acc < best_t:
                best_t = t_acc
                best = list(current)
            return
        lb = bound(d, room)
        if lb is None or t_acc + lb >= best_t:
            return
        rest_min = suffix_ws[d + 1]
        start = rank[d - 1] if same_as_prev[d] else 0
        for r in range(start, len(item_order[d])):
            i = item_order[d][r]
            t, w = og[d][i]
            if w + rest_min > room:
                continue
            current[d] = i
            rank[d] = r
            dfs(d + 1, t_acc + t, room - w)

    dfs(0, 0, cap)

    indices = [0] * n
    for d, i in enumerate(order):
        indices[i] = best[d]
    selected = [problem.choice_sets[k][indices[k]] for k in range(n)]
    sol = ChoiceSolution(
        kernels=list(problem.kernels),
        selected=selected,
        indices=indices,
        total_time=sum((c.time for c in selected), Fraction(0)),
        total_workspace=sum(c.workspace for c in selected),
        budget=budget,
        nodes=nodes,
        choice_sets=list(problem.choice_sets),
    )
    sol.check()
    return sol


class _SlopeKey:
    """Orders segments (dw > 0, dt < 0) by dt/dw ascending, then position."""

    __slots__ = ("dw", "dt", "d", "j")

    def __init__(self, seg: tuple):
        self.dw, self.dt, self.d, self.j = seg

    def __lt__(self, other: "_SlopeKey") -> bool:
        lhs = self.dt * other.dw
        rhs = other.dt * self.dw
        if lhs != rhs:
            return lhs < rhs
        return (self.d, self.j) < (other.d, other.j)


# -- whole-network driver ---------------------------------------------------

def wd_optimize(provider: CostProvider, kernels: Sequence[KernelDescriptor],
                batches: int | Sequence[int] | None, M_total: int,
                policy: BatchSizePolicy = BatchSizePolicy.All, *,
                jobs: int = 1, cap: int = DEFAULT_FRONT_CAP) -> ChoiceSolution:
    """Choose one configuration per kernel minimizing total time within ``M_total``.

    Kernels with equal canonical hash and batch share one front, but each
    still gets its own choice in the knapsack.  ``batches`` defaults to each
    kernel's own ``batch`` field.
    """
    if not kernels:
        raise ValueError("need at least one kernel")
    if batches is None:
        Bs = [k.batch for k in kernels]
    elif isinstance(batches, int):
        Bs = [batches] * len(kernels)
    else:
        Bs = list(batches)
        if len(Bs) != len(kernels):
            raise ValueError("one batch size per kernel")

    unique: dict[tuple, int] = {}
    jobs_list: list[tuple[KernelDescriptor, int]] = []
    slot = []
    for k, B in zip(kernels, Bs):
        key = (k.canonical_hash(), B)
        if key not in unique:
            unique[key] = len(jobs_list)
            jobs_list.append((k, B))
        slot.append(unique[key])

    # kernels whose micro-configuration tables coincide get the same front
    def micro_table(item):
        k, B = item
        return _signature({b: provider.micro_config_set(k, b, M_total)
                           for b in enumerate_micro_batches(policy, B)})

    def build(item):
        k, B = item
        return _config_set_with_stats(provider, k, B, M_total, policy, cap)

    with ThreadPoolExecutor(max_workers=max(1, jobs)) as pool:
        sigs = list(pool.map(micro_table, jobs_list))
        first: dict[tuple, int] = {}
        for i, sig in enumerate(sigs):
            first.setdefault(sig, i)
        leaders = sorted(set(first.values()))
        made = dict(zip(leaders, pool.map(build, [jobs_list[i] for i in leaders])))
    built = []
    for i, sig in enumerate(sigs):
        cs, mf = made[first[sig]]
        built.append((ConfigurationSet(jobs_list[i][0], cs.members), mf))

    sets = [built[s][0] for s in slot]
    for k, cs in zip(kernels, sets):
        if not cs.members:
            raise InfeasibleError(f"no configuration of {k.describe()} fits within {M_total} bytes")
    sol = ilp_solve(ChoiceProblem(list(kernels), [cs.members for cs in sets], M_total))
    sol.max_front = max(m for _, m in built)
    return sol
