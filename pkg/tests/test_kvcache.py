import math

import numpy as np
import pytest

from tokenlab.core import derive_rng_stream
from tokenlab.kvcache import (
    CacheEvent,
    CacheEventKind,
    CacheState,
    EvictionPolicy,
    KvBlock,
    assign_tokens_to_blocks,
    block_shadow_price,
    evict,
    incremental_update,
    metadata_overhead,
)
from tokenlab.valuation import Provenance, ValueEstimate
from util import make_units


def est(uid, mean):
    return ValueEstimate(
        unit_id=uid, mean=mean, variance=0.0,
        provenance=Provenance.RECENCY, sensing_cost_charged=0.0,
    )


def fresh_cache(capacity=16, block_size=4, mu=1.0):
    return CacheState(capacity=capacity, block_size=block_size, mu=mu)


class TestAssignTokensToBlocks:
    def test_five_tokens_block_two(self):
        pages = assign_tokens_to_blocks(make_units(5), 2)
        assert [len(p) for p in pages] == [2, 2, 1]

    def test_oversized_block_single_page(self):
        pages = assign_tokens_to_blocks(make_units(3), 10)
        assert len(pages) == 1

    def test_empty(self):
        assert assign_tokens_to_blocks([], 4) == []

    def test_block_size_validated(self):
        with pytest.raises(ValueError, match="block_size"):
            assign_tokens_to_blocks(make_units(2), 0)


class TestBlockShadowPrice:
    def _block(self, values):
        return KvBlock(
            block_id=0,
            token_ids=list(range(len(values))),
            token_values={i: v for i, v in enumerate(values)},
            size=len(values),
            last_access_step=0,
            attention_mass=0.0,
            value_sum=sum(values),
        )

    def test_worked_example(self):
        block = self._block([0.5, 0.3])
        estimates = {0: est(0, 0.5), 1: est(1, 0.3)}
        assert block_shadow_price(block, estimates, mu=1.0, pressure=0.1) == pytest.approx(0.3)

    def test_pressure_free_limit_is_density(self):
        block = self._block([0.5, 0.3])
        estimates = {0: est(0, 0.5), 1: est(1, 0.3)}
        assert block_shadow_price(block, estimates, mu=1.0, pressure=0.0) == pytest.approx(0.4)

    def test_zero_values_negative_price(self):
        block = self._block([0.0, 0.0])
        estimates = {0: est(0, 0.0), 1: est(1, 0.0)}
        assert block_shadow_price(block, estimates, mu=1.0, pressure=0.2) == pytest.approx(-0.2)

    def test_missing_estimate_rejected(self):
        block = self._block([0.5, 0.3])
        with pytest.raises(ValueError, match="missing"):
            block_shadow_price(block, {0: est(0, 0.5)}, mu=1.0, pressure=0.0)

    def test_empty_block_rejected(self):
        block = KvBlock(0, [], {}, 0, 0, 0.0, 0.0)
        with pytest.raises(ValueError, match="empty"):
            block_shadow_price(block, {}, mu=1.0, pressure=0.0)


def seed_cache_with_blocks(values_by_block, capacity=16, block_size=4):
    cache = fresh_cache(capacity=capacity, block_size=block_size)
    units = make_units(sum(len(v) for v in values_by_block))
    idx = 0
    for step, values in enumerate(values_by_block):
        page = units[idx : idx + len(values)]
        estimates = {u.unit_id: est(u.unit_id, values[i]) for i, u in enumerate(page)}
        cache.insert_block(page, estimates, step=step, attention_mass=float(np.mean(values)))
        idx += len(values)
    return cache


class TestEvict:
    def test_value_aware_lowest_price_first(self):
        cache = seed_cache_with_blocks([[0.3], [-0.2], [0.7]], capacity=3, block_size=1)
        evicted = evict(cache, needed=1, policy=EvictionPolicy.VALUE_AWARE)
        assert evicted == [1]

    def test_lru_oldest_access_first(self):
        cache = seed_cache_with_blocks([[0.5], [0.5]], capacity=2, block_size=1)
        cache.blocks[0].last_access_step = 5
        cache.blocks[1].last_access_step = 2
        assert evict(cache, needed=1, policy=EvictionPolicy.LRU) == [1]

    def test_heavy_hitter_low_attention_first(self):
        cache = seed_cache_with_blocks([[0.9], [0.1]], capacity=2, block_size=1)
        assert evict(cache, needed=1, policy=EvictionPolicy.HEAVY_HITTER) == [1]

    def test_uniform_random_uses_stream(self):
        a = seed_cache_with_blocks([[0.1], [0.2], [0.3]], capacity=3, block_size=1)
        b = seed_cache_with_blocks([[0.1], [0.2], [0.3]], capacity=3, block_size=1)
        sa = derive_rng_stream(9, "evict")
        sb = derive_rng_stream(9, "evict")
        assert a.evict(1, EvictionPolicy.UNIFORM_RANDOM, sa) == b.evict(
            1, EvictionPolicy.UNIFORM_RANDOM, sb
        )

    def test_needed_zero_no_eviction(self):
        cache = seed_cache_with_blocks([[0.3]], capacity=1, block_size=1)
        assert evict(cache, needed=0, policy=EvictionPolicy.LRU) == []

    def test_needed_over_capacity_rejected(self):
        cache = fresh_cache(capacity=4)
        with pytest.raises(ValueError, match="capacity"):
            evict(cache, needed=5, policy=EvictionPolicy.LRU)

    def test_ties_break_by_lowest_block_id(self):
        cache = seed_cache_with_blocks([[0.5], [0.5]], capacity=2, block_size=1)
        assert evict(cache, needed=1, policy=EvictionPolicy.VALUE_AWARE) == [0]

    def test_empty_blocks_evicted_first(self):
        cache = seed_cache_with_blocks([[9.9]], capacity=1, block_size=1)
        empty_id = cache.new_block_id()
        cache.blocks[empty_id] = KvBlock(empty_id, [], {}, 0, 99, 0.0, 0.0)
        evicted = evict(cache, needed=1, policy=EvictionPolicy.VALUE_AWARE)
        assert evicted[0] == empty_id


class TestIncrementalUpdate:
    def test_append_equal_density_keeps_price(self):
        cache = fresh_cache(capacity=4, block_size=4, mu=0.0)
        unit = make_units(1)[0]
        cache.insert_block([unit], {0: est(0, 0.4)}, step=0)
        before = cache.shadow_price(0)
        incremental_update(
            cache,
            CacheEvent(kind=CacheEventKind.TOKEN_APPENDED, block_id=0, token_id=1, estimate=0.4),
        )
        assert cache.shadow_price(0) == pytest.approx(before) == pytest.approx(0.4)

    def test_revision_moves_price_by_delta_over_size(self):
        cache = fresh_cache(capacity=4, block_size=2, mu=0.0)
        units = make_units(2)
        cache.insert_block(units, {0: est(0, 0.5), 1: est(1, 0.5)}, step=0)
        before = cache.shadow_price(0)
        incremental_update(
            cache,
            CacheEvent(kind=CacheEventKind.ESTIMATE_REVISED, block_id=0, token_id=0, estimate=0.9),
        )
        assert cache.shadow_price(0) - before == pytest.approx(0.2)

    def test_access_updates_recency(self):
        cache = fresh_cache()
        cache.insert_block(make_units(1), {0: est(0, 1.0)}, step=0)
        incremental_update(cache, CacheEvent(kind=CacheEventKind.ACCESS, block_id=0, step=7))
        assert cache.blocks[0].last_access_step == 7

    def test_metadata_charged_per_event(self):
        cache = fresh_cache()
        cache.insert_block(make_units(1), {0: est(0, 1.0)}, step=0)
        incremental_update(cache, CacheEvent(kind=CacheEventKind.ACCESS, block_id=0, step=1))
        incremental_update(cache, CacheEvent(kind=CacheEventKind.ACCESS, block_id=0, step=2))
        assert cache.metadata_units == 2

    def test_event_on_evicted_block_rejected(self):
        cache = seed_cache_with_blocks([[0.1], [0.9]], capacity=2, block_size=1)
        evict(cache, needed=1, policy=EvictionPolicy.VALUE_AWARE)
        with pytest.raises(ValueError, match="evicted"):
            incremental_update(cache, CacheEvent(kind=CacheEventKind.ACCESS, block_id=0, step=3))

    def test_long_random_sequence_matches_recompute(self):
        # 10^4 events; incremental prices equal from-scratch recomputation to 1e-12
        rng = derive_rng_stream(21, "cache-events")
        cache = fresh_cache(capacity=600, block_size=8, mu=0.7)
        next_token = 0
        for _ in range(10_000):
            roll = rng.random()
            live = sorted(cache.blocks)
            if roll < 0.55 or not live:
                if cache.occupancy + 1 > cache.capacity:
                    cache.evict(1, EvictionPolicy.VALUE_AWARE)
                incremental_update(
                    cache,
                    CacheEvent(
                        kind=CacheEventKind.TOKEN_APPENDED,
                        token_id=next_token,
                        estimate=float(rng.normal(0.5, 0.3)),
                        step=int(rng.integers(0, 100)),
                    ),
                )
                next_token += 1
            elif roll < 0.8:
                bid = int(live[int(rng.integers(0, len(live)))])
                block = cache.blocks[bid]
                if block.token_ids:
                    tid = block.token_ids[int(rng.integers(0, len(block.token_ids)))]
                    incremental_update(
                        cache,
                        CacheEvent(
                            kind=CacheEventKind.ESTIMATE_REVISED,
                            block_id=bid,
                            token_id=tid,
                            estimate=float(rng.normal(0.5, 0.3)),
                        ),
                    )
            else:
                bid = int(live[int(rng.integers(0, len(live)))])
                incremental_update(
                    cache,
                    CacheEvent(kind=CacheEventKind.ACCESS, block_id=bid, step=int(rng.integers(0, 100))),
                )
            assert cache.occupancy <= cache.capacity
        for bid in cache.blocks:
            assert cache.shadow_price(bid) == pytest.approx(
                cache.recompute_density_from_scratch(bid), abs=1e-12
            )


class TestMetadataOverhead:
    def test_arithmetic_pass(self):
        ratio, passed = metadata_overhead(1, 200, gamma=0.01)
        assert ratio == 0.005 and passed

    def test_arithmetic_fail(self):
        ratio, passed = metadata_overhead(5, 200, gamma=0.01)
        assert ratio == 0.025 and not passed

    def test_zero_metadata(self):
        ratio, passed = metadata_overhead(0, 100, gamma=0.01)
        assert ratio == 0.0 and passed

    def test_zero_base_rejected(self):
        with pytest.raises(ValueError, match="base cost"):
            metadata_overhead(1, 0, gamma=0.01)


class TestPolicySeparation:
    def _planted_run(self, policy, seed, cv=1.5):
        """Fill a small cache from a planted stream; return retained true value."""
        from tokenlab.workload import ValueDist, WorkloadParams, build_request

        stream = derive_rng_stream(seed, "cache-sep")
        params = WorkloadParams(
            rate=1.0, tokens_per_request=8, value_cv=cv,
            value_dist=ValueDist.PLANTED_EARLY_INSTRUCTION if cv > 0 else ValueDist.UNIFORM,
            attention_bias=0.6,
        )
        cache = fresh_cache(capacity=16, block_size=4)
        truth = {}
        for rid in range(6):
            req = build_request(rid, rid, 8, params, stream, rid * 8)
            truth.update(req.true_values)
            pages = assign_tokens_to_blocks(list(req.tokens), 4)
            for page in pages:
                estimates = {
                    t.unit_id: est(t.unit_id, req.true_values[t.unit_id]) for t in page
                }
                cache.evict(len(page), policy, derive_rng_stream(seed, "evict-stream"))
                cache.insert_block(page, estimates, step=rid)
        return sum(truth[tid] for tid in cache.retained_token_ids())

    def test_value_aware_dominates_lru_on_planted(self):
        diffs = []
        for seed in range(100):
            va = self._planted_run(EvictionPolicy.VALUE_AWARE, seed)
            lru = self._planted_run(EvictionPolicy.LRU, seed)
            diffs.append(va - lru)
        diffs = np.array(diffs)
        assert (diffs >= -1e-9).all()
        stderr = diffs.std(ddof=1) / math.sqrt(len(diffs))
        assert diffs.mean() - 1.96 * stderr > 0  # strict at 95%

    def test_uniform_values_tie_within_two_sigma(self):
        diffs = []
        for seed in range(40):
            va = self._planted_run(EvictionPolicy.VALUE_AWARE, seed, cv=0.0)
            lru = self._planted_run(EvictionPolicy.LRU, seed, cv=0.0)
            diffs.append(va - lru)
        diffs = np.array(diffs)
        stderr = diffs.std(ddof=1) / math.sqrt(len(diffs))
        assert abs(diffs.mean()) <= 2 * stderr + 1e-9
