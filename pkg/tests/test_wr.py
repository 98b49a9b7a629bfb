import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from mbsplit.costs import (
    AlgorithmParams,
    BatchSizePolicy,
    CostDatabase,
    CostProvider,
    CostRecord,
    enumerate_micro_batches,
)
from mbsplit.domain import AlgorithmId, config_time, config_workspace
from mbsplit.oracle import brute_wr, random_budget, random_model, toy_kernel
from mbsplit.wr import InfeasibleError, wr_optimize, wr_table, wr_table_top_down

from conftest import CHEAP, FAST, linear_model, unit_kernel


def shape(config):
    return [(m.algorithm, m.micro_batch) for m in config]


def test_split_when_undivided_does_not_fit(cheap_fast):
    k = unit_kernel(64)
    config, t = wr_optimize(cheap_fast, k, 64, 320)
    assert shape(config) == [(FAST, 32), (FAST, 32)]
    assert t == 32 and config_workspace(config) == 320


def test_undivided_when_everything_fits(cheap_fast):
    config, t = wr_optimize(cheap_fast, unit_kernel(64), 64, 10_000)
    assert shape(config) == [(FAST, 64)] and t == 32


def test_undivided_policy_falls_back_to_cheap(cheap_fast):
    config, t = wr_optimize(cheap_fast, unit_kernel(64), 64, 320, BatchSizePolicy.Undivided)
    assert shape(config) == [(CHEAP, 64)] and t == 64


def test_zero_workspace(cheap_fast):
    config, t = wr_optimize(cheap_fast, unit_kernel(64), 64, 0)
    assert shape(config) == [(CHEAP, 64)] and t == 64


def test_odd_leftover_mixes_algorithms(cheap_fast):
    # budget 320 fits FAST up to 32 samples: 32+32 covers 64, 32+32+1 covers 65
    config, t = wr_optimize(cheap_fast, unit_kernel(65), 65, 320)
    assert t == Fraction(65, 2)
    assert config.covered_batch == 65


def test_infeasible_names_kernel():
    p = CostProvider(linear_model(AlgorithmParams(CHEAP, 1, ws_fixed=100)))
    with pytest.raises(InfeasibleError, match="within 50 bytes"):
        wr_optimize(p, unit_kernel(8, name="conv9"), 8, 50)


def test_rejects_bad_arguments(cheap_fast):
    with pytest.raises(ValueError):
        wr_table(cheap_fast, unit_kernel(), 0, 10)
    with pytest.raises(ValueError):
        wr_table(cheap_fast, unit_kernel(), 4, -1)


def measured_provider(k, B, sweet=60):
    """Measurement-only costs: one algorithm with a sweet spot at ``sweet`` samples."""
    db = CostDatabase()
    h = k.canonical_hash()
    plain, tuned = AlgorithmId(0, "PLAIN"), AlgorithmId(4, "TUNED")
    for b in range(1, B + 1):
        db.put(CostRecord(h, k.op_type, plain, b, Fraction(b), 0, True))
        t = Fraction(5 * sweet, 6) if b == sweet else Fraction(9 * b, 10) + 8
        db.put(CostRecord(h, k.op_type, tuned, b, t, 100, True))
    return CostProvider(db=db, catalog=[plain, tuned])


def test_measured_sweet_spot_repeats():
    # TUNED@60 runs at 5/6 us per sample; every other record is >= 0.9, so
    # 180 samples cannot take less than 180 * 5/6 = 150 us.
    k = unit_kernel(180)
    p = measured_provider(k, 180)
    config, t = wr_optimize(p, k, 180, 100)
    assert t == 150
    assert [(m.algorithm.id, m.micro_batch) for m in config] == [(4, 60)] * 3
    config, t = wr_optimize(p, k, 180, 99)
    assert t == 180 and [(m.algorithm.id, m.micro_batch) for m in config] == [(0, 180)]


def test_measured_sweet_spot_small_matches_brute_force():
    k = unit_kernel(12)
    p = measured_provider(k, 12, sweet=4)
    table = wr_table(p, k, 12, 100)
    # brute force over all multisets straight from the records
    from mbsplit.oracle import partitions

    best = min(sum(min(p.cost(k, a, b).time for a in p.catalog) for b in parts)
               for parts in partitions(12, range(1, 13)))
    assert table.best_time(12) == best == 10


def test_equal_time_prefers_fewer_micro_batches():
    p = CostProvider(linear_model(AlgorithmParams(CHEAP, 1)))
    config, _ = wr_optimize(p, unit_kernel(10), 10, 0)
    assert len(config) == 1


def test_equal_time_and_count_lexicographic():
    # parts 3+1 and 2+2 both cost 4: (-3,..) sorts first
    p = CostProvider(linear_model(AlgorithmParams(CHEAP, 1, ws_per_sample=1)))
    config, _ = wr_optimize(p, unit_kernel(4), 4, 3)
    assert [m.micro_batch for m in config] == [3, 1]


# -- properties ---------------------------------------------------------------

seeds = st.integers(0, 2**32 - 1)
policies = st.sampled_from(list(BatchSizePolicy))


def instance(seed, max_batch=16):
    rng = random.Random(seed)
    model = random_model(rng, rng.randint(1, 3))
    B = rng.randint(1, max_batch)
    M = random_budget(rng, [model], B)
    return model, toy_kernel(0, B), B, M


@settings(max_examples=300, deadline=None)
@given(seeds, policies)
def test_matches_exhaustive(seed, policy):
    model, k, B, M = instance(seed)
    expected = brute_wr(model, k, B, M, policy)
    table = wr_table(CostProvider(model), k, B, M, policy)
    assert table.best_time(B) == expected
    c = table.best_config(B)
    if expected is None:
        assert c is None
    else:
        assert config_time(c) == expected
        assert config_workspace(c) <= M
        assert c.covered_batch == B
        allowed = set(enumerate_micro_batches(policy, B))
        assert all(m.micro_batch in allowed for m in c)


@settings(max_examples=150, deadline=None)
@given(seeds, st.integers(0, 400), st.integers(0, 400))
def test_monotone_in_workspace(seed, m1, m2):
    model, k, B, _ = instance(seed)
    lo, hi = sorted((m1, m2))
    p = CostProvider(model)
    t_lo, t_hi = wr_table(p, k, B, lo).best_time(B), wr_table(p, k, B, hi).best_time(B)
    if t_lo is not None:
        assert t_hi is not None and t_hi <= t_lo


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_policy_refinement(seed):
    model, k, B, M = instance(seed)
    p = CostProvider(model)
    t = {pol: wr_table(p, k, B, M, pol).best_time(B) for pol in BatchSizePolicy}
    order = [BatchSizePolicy.All, BatchSizePolicy.PowerOfTwo, BatchSizePolicy.Undivided]
    for finer, coarser in zip(order, order[1:]):
        if t[coarser] is not None:
            assert t[finer] is not None and t[finer] <= t[coarser]


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_undivided_is_fastest_micro_config(seed):
    model, k, B, M = instance(seed)
    p = CostProvider(model)
    table = wr_table(p, k, B, M, BatchSizePolicy.Undivided)
    best = p.fastest_micro_config(k, B, M)
    if best is None:
        assert table.best_config(B) is None
    else:
        assert list(table.best_config(B)) == [best]


@settings(max_examples=150, deadline=None)
@given(seeds, policies)
def test_top_down_equals_bottom_up(seed, policy):
    model, k, B, M = instance(seed)
    p = CostProvider(model)
    a, b = wr_table(p, k, B, M, policy), wr_table_top_down(p, k, B, M, policy)
    assert a.summary() == b.summary()
    assert a.best_config(B) == b.best_config(B)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_table_prefixes_are_optimal(seed):
    model, k, B, M = instance(seed, 12)
    table = wr_table(CostProvider(model), k, B, M)
    for b in range(1, B + 1):
        assert table.best_time(b) == brute_wr(model, k, b, M)


def test_large_batch_top_down():
    p = CostProvider(linear_model(AlgorithmParams(CHEAP, 1), AlgorithmParams(FAST, Fraction(1, 2), ws_per_sample=10)))
    k = unit_kernel(1024)
    a = wr_table(p, k, 1024, 640)
    b = wr_table_top_down(p, k, 1024, 640)
    assert a.best_time(1024) == b.best_time(1024) == 512
