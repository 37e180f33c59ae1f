"""Value-aware paged cache with block shadow prices versus baseline eviction.

Each block caches the numerator of its value density (sum of per-token value
estimates); the pressure term is applied at evaluation time so that a global
occupancy change never stales cached per-block state. Empty blocks sort
strictly first for eviction via a sentinel ordering, since the price formula
is undefined at size zero.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Mapping, Sequence

import numpy as np

from .core import TokenUnit
from .valuation import ValueEstimate


class EvictionPolicy(str, Enum):
    VALUE_AWARE = "value_aware"
    LRU = "lru"
    HEAVY_HITTER = "heavy_hitter"
    UNIFORM_RANDOM = "uniform_random"


class CacheEventKind(str, Enum):
    TOKEN_APPENDED = "token_appended"
    ACCESS = "access"
    ESTIMATE_REVISED = "estimate_revised"


@dataclass(frozen=True, slots=True)
class CacheEvent:
    kind: CacheEventKind
    block_id: int | None = None  # None on append targets the tail (or a new) block
    token_id: int | None = None
    estimate: float = 0.0
    memory: int = 1
    step: int = 0


@dataclass
class KvBlock:
    block_id: int
    token_ids: list[int]
    token_values: dict[int, float]
    size: int
    last_access_step: int
    attention_mass: float
    value_sum: float

    def density(self) -> float:
        if self.size <= 0:
            raise ValueError("value density undefined for empty blocks")
        return self.value_sum / self.size


def assign_tokens_to_blocks(
    tokens: Sequence[TokenUnit], block_size: int, start_block_id: int = 0
) -> list[list[TokenUnit]]:
    """Pack tokens into arrival-order pages of at most `block_size` tokens."""
    if block_size < 1:
        raise ValueError("block_size must be >= 1")
    return [list(tokens[i : i + block_size]) for i in range(0, len(tokens), block_size)]


def block_shadow_price(
    block: KvBlock,
    estimates: Mapping[int, ValueEstimate],
    mu: float,
    pressure: float,
) -> float:
    """lambda_b = sum of estimated token values / size(b) - mu * pressure_b."""
    if block.size <= 0:
        raise ValueError("shadow price undefined for empty blocks")
    missing = [tid for tid in block.token_ids if tid not in estimates]
    if missing:
        raise ValueError(f"missing value estimates for tokens {missing}")
    total = sum(estimates[tid].mean for tid in block.token_ids)
    return total / block.size - mu * pressure


class CacheState:
    """Paged cache owned by a single trajectory; occupancy never exceeds capacity."""

    def __init__(
        self,
        capacity: int,
        block_size: int,
        mu: float = 1.0,
        gamma: float = 0.01,
    ) -> None:
        if capacity < 0:
            raise ValueError("capacity must be >= 0")
        if block_size < 1:
            raise ValueError("block_size must be >= 1")
        self.capacity = capacity
        self.block_size = block_size
        self.mu = mu
        self.gamma = gamma
        self.blocks: dict[int, KvBlock] = {}
        self.occupancy = 0
        self.metadata_units = 0
        self.contention: dict[int, float] = {}
        self._next_block_id = 0
        self._evicted: set[int] = set()

    # -- pressure definition is isolated here for replacement (model choice) --
    def block_pressure(self, block_id: int) -> float:
        base = self.occupancy / self.capacity if self.capacity > 0 else 1.0
        return base + self.contention.get(block_id, 0.0)

    def shadow_price(self, block_id: int) -> float:
        block = self.blocks[block_id]
        if block.size == 0:
            return -math.inf  # reporting stand-in for the eviction-first sentinel
        return block.density() - self.mu * self.block_pressure(block_id)

    def shadow_prices(self) -> dict[int, float]:
        return {bid: self.shadow_price(bid) for bid in sorted(self.blocks)}

    def new_block_id(self) -> int:
        bid = self._next_block_id
        self._next_block_id += 1
        return bid

    def insert_block(
        self,
        tokens: Sequence[TokenUnit],
        estimates: Mapping[int, ValueEstimate],
        step: int,
        attention_mass: float = 0.0,
    ) -> int:
        """Construct a fresh page wholesale (prefill path; no metadata charge)."""
        size = sum(t.cost_components.memory for t in tokens)
        if len(tokens) > self.block_size:
            raise ValueError("block exceeds the configured block size")
        if self.occupancy + size > self.capacity:
            raise ValueError("insert would exceed capacity; evict first")
        missing = [t.unit_id for t in tokens if t.unit_id not in estimates]
        if missing:
            raise ValueError(f"missing value estimates for tokens {missing}")
        bid = self.new_block_id()
        values = {t.unit_id: estimates[t.unit_id].mean for t in tokens}
        self.blocks[bid] = KvBlock(
            block_id=bid,
            token_ids=[t.unit_id for t in tokens],
            token_values=values,
            size=size,
            last_access_step=step,
            attention_mass=attention_mass,
            value_sum=sum(values.values()),
        )
        self.occupancy += size
        return bid

    def apply_event(self, event: CacheEvent) -> int:
        """Apply one incremental event; charges 1 metadata unit. Returns the block id."""
        if event.block_id is not None and event.block_id in self._evicted:
            raise ValueError(f"event targets evicted block {event.block_id}")
        if event.kind is CacheEventKind.TOKEN_APPENDED:
            bid = self._append_token(event)
        elif event.kind is CacheEventKind.ACCESS:
            if event.block_id not in self.blocks:
                raise ValueError(f"access to unknown block {event.block_id}")
            self.blocks[event.block_id].last_access_step = event.step
            bid = event.block_id
        else:
            bid = self._revise_estimate(event)
        self.metadata_units += 1
        return bid

    def _tail_block(self) -> KvBlock | None:
        if not self.blocks:
            return None
        return self.blocks[max(self.blocks)]

    def _append_token(self, event: CacheEvent) -> int:
        if event.token_id is None:
            raise ValueError("token_appended requires a token_id")
        if self.occupancy + event.memory > self.capacity:
            raise ValueError("append would exceed capacity; evict first")
        target: KvBlock | None
        if event.block_id is not None:
            if event.block_id not in self.blocks:
                raise ValueError(f"append to unknown block {event.block_id}")
            target = self.blocks[event.block_id]
            if len(target.token_ids) >= self.block_size:
                raise ValueError(f"block {event.block_id} is full")
        else:
            target = self._tail_block()
            if target is None or len(target.token_ids) >= self.block_size:
                bid = self.new_block_id()
                target = KvBlock(
                    block_id=bid,
                    token_ids=[],
                    token_values={},
                    size=0,
                    last_access_step=event.step,
                    attention_mass=0.0,
                    value_sum=0.0,
                )
                self.blocks[bid] = target
        target.token_ids.append(event.token_id)
        target.token_values[event.token_id] = event.estimate
        target.size += event.memory
        target.value_sum += event.estimate
        target.last_access_step = event.step
        self.occupancy += event.memory
        return target.block_id

    def _revise_estimate(self, event: CacheEvent) -> int:
        if event.block_id is None or event.block_id not in self.blocks:
            raise ValueError(f"revision targets unknown block {event.block_id}")
        block = self.blocks[event.block_id]
        if event.token_id not in block.token_values:
            raise ValueError(f"token {event.token_id} not in block {event.block_id}")
        old = block.token_values[event.token_id]
        block.token_values[event.token_id] = event.estimate
        block.value_sum += event.estimate - old
        return block.block_id

    def recompute_density_from_scratch(self, block_id: int) -> float:
        """Oracle for the incremental path: fresh sum over per-token estimates."""
        block = self.blocks[block_id]
        if block.size == 0:
            return -math.inf
        total = 0.0
        for tid in block.token_ids:
            total += block.token_values[tid]
        return total / block.size - self.mu * self.block_pressure(block_id)

    def evict(
        self,
        needed: int,
        policy: EvictionPolicy,
        stream: np.random.Generator | None = None,
    ) -> list[int]:
        """Evict whole blocks until `needed` memory units fit; returns evicted ids."""
        if needed > self.capacity:
            raise ValueError(f"needed {needed} exceeds capacity {self.capacity}")
        if self.occupancy + needed <= self.capacity:
            return []
        ids = sorted(self.blocks)
        if policy is EvictionPolicy.VALUE_AWARE:
            order = sorted(
                ids, key=lambda b: (self.blocks[b].size > 0, self.shadow_price(b), b)
            )
        elif policy is EvictionPolicy.LRU:
            order = sorted(
                ids,
                key=lambda b: (self.blocks[b].size > 0, self.blocks[b].last_access_step, b),
            )
        elif policy is EvictionPolicy.HEAVY_HITTER:
            order = sorted(
                ids,
                key=lambda b: (self.blocks[b].size > 0, self.blocks[b].attention_mass, b),
            )
        else:
            if stream is None:
                raise ValueError("uniform_random eviction requires a stream")
            random_order = [ids[k] for k in stream.permutation(len(ids))]
            empties = [b for b in ids if self.blocks[b].size == 0]
            order = empties + [b for b in random_order if self.blocks[b].size > 0]
        evicted: list[int] = []
        for bid in order:
            if self.occupancy + needed <= self.capacity:
                break
            block = self.blocks.pop(bid)
            self.occupancy -= block.size
            self._evicted.add(bid)
            self.contention.pop(bid, None)
            evicted.append(bid)
        return evicted

    def release_block(self, block_id: int) -> KvBlock:
        """Remove a completed request's block; frees memory, no metadata charge."""
        if block_id not in self.blocks:
            raise ValueError(f"release of unknown block {block_id}")
        block = self.blocks.pop(block_id)
        self.occupancy -= block.size
        self._evicted.add(block_id)
        self.contention.pop(block_id, None)
        return block

    def retained_token_ids(self) -> list[int]:
        out: list[int] = []
        for bid in sorted(self.blocks):
            out.extend(self.blocks[bid].token_ids)
        return out


def incremental_update(cache: CacheState, event: CacheEvent) -> int:
    """Apply one cache event (1 metadata unit); touched block's price stays exact."""
    return cache.apply_event(event)


def evict(
    cache: CacheState,
    needed: int,
    policy: EvictionPolicy,
    stream: np.random.Generator | None = None,
) -> list[int]:
    return cache.evict(needed, policy, stream)


def metadata_overhead(metadata_units: float, base_cost: float, gamma: float) -> tuple[float, bool]:
    """Ratio of metadata spend to simulated prefill+decode cost; pass iff < gamma."""
    if base_cost <= 0:
        raise ValueError("base cost must be > 0")
    ratio = metadata_units / base_cost
    return ratio, ratio < gamma
