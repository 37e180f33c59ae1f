from struct import error as struct_error

import pytest

from tokenlab.accounting import (
    GENESIS_DIGEST,
    Ledger,
    LedgerEntry,
    canonical_entry_bytes,
    entry_digest,
    verification_overhead,
)
from tokenlab.core import TokenClass, derive_rng_stream


def build_ledger(n=10, policy="greedy/value_aware"):
    ledger = Ledger()
    classes = list(TokenClass)
    for i in range(n):
        ledger.record(
            step=i,
            token_class=classes[i % len(classes)],
            count=i * 3 + 1,
            cost_units=0.5 * i,
            policy_id=policy,
        )
    return ledger


class TestRecord:
    def test_genesis_prev_digest_zero_bytes(self):
        ledger = Ledger()
        entry = ledger.record(0, TokenClass.INPUT, 5, 1.0, "p")
        assert entry.sequence == 0
        assert entry.prev_digest == GENESIS_DIGEST == b"\x00" * 32

    def test_same_entries_same_head(self):
        assert build_ledger().head_hex == build_ledger().head_hex

    def test_order_sensitivity(self):
        a = Ledger()
        a.record(0, TokenClass.INPUT, 1, 0.0, "p")
        a.record(1, TokenClass.OUTPUT, 2, 0.0, "p")
        b = Ledger()
        b.record(1, TokenClass.OUTPUT, 2, 0.0, "p")
        b.record(0, TokenClass.INPUT, 1, 0.0, "p")
        assert a.head_hex != b.head_hex

    def test_head_hex_lowercase(self):
        head = build_ledger().head_hex
        assert head == head.lower() and len(head) == 64

    def test_costs_hashed_as_scaled_integers(self):
        entry = Ledger().record(0, TokenClass.INPUT, 1, 1.25, "p")
        assert entry.cost_scaled == 1_250_000
        assert entry.cost_units == pytest.approx(1.25)


class TestVerifyChain:
    def test_untampered_hundred_entries(self):
        assert build_ledger(100).verify_chain() is None

    def test_count_mutation_reports_entry_index(self):
        ledger = build_ledger(20)
        victim = ledger.entries[7]
        ledger.entries[7] = LedgerEntry(
            sequence=victim.sequence,
            step=victim.step,
            token_class=victim.token_class,
            count=victim.count + 1,
            cost_scaled=victim.cost_scaled,
            policy_id=victim.policy_id,
            prev_digest=victim.prev_digest,
        )
        assert ledger.verify_chain() == 7

    def test_empty_ledger_ok(self):
        assert Ledger().verify_chain() is None

    def test_single_bit_mutations_always_detected(self):
        rng = derive_rng_stream(33, "tamper")
        ledger = build_ledger(25)
        blob = ledger.to_bytes()
        detected = 0
        trials = 1000
        header = 4  # record count prefix; flips there are parse failures
        for _ in range(trials):
            bit = int(rng.integers(header * 8, len(blob) * 8))
            mutated = bytearray(blob)
            mutated[bit // 8] ^= 1 << (bit % 8)
            try:
                loaded = Ledger.from_bytes(bytes(mutated))
            except (ValueError, UnicodeDecodeError, struct_error):
                detected += 1
                continue
            if loaded.verify_chain() is not None:
                detected += 1
        assert detected == trials

    def test_round_trip_bytes(self):
        ledger = build_ledger(12)
        again = Ledger.from_bytes(ledger.to_bytes())
        assert again.verify_chain() is None
        assert again.head_hex == ledger.head_hex
        assert again.entries == ledger.entries

    def test_text_export_contains_head(self):
        ledger = build_ledger(3)
        text = ledger.to_text()
        assert ledger.head_hex in text
        assert text.splitlines()[0].startswith("sequence")


class TestSummarize:
    def test_three_class_totals(self):
        ledger = Ledger()
        ledger.record(0, TokenClass.INPUT, 10, 10.0, "p")
        ledger.record(0, TokenClass.OUTPUT, 5, 20.0, "p")
        ledger.record(1, TokenClass.REASONING, 7, 7.0, "p")
        totals = ledger.summarize_by_class()
        assert totals[TokenClass.INPUT] == (10, 10.0)
        assert totals[TokenClass.OUTPUT] == (5, 20.0)
        assert totals[TokenClass.REASONING] == (7, 7.0)

    def test_empty_ledger_all_zero(self):
        assert Ledger().summarize_by_class() == {}

    def test_totals_match_simulator_conservation(self):
        from tokenlab.scenario import validate_scenario
        from tokenlab.simulator import run

        cfg = validate_scenario(
            {
                "seed": 4,
                "horizon": 30,
                "workload": {
                    "rate": 0.6,
                    "tokens_per_request": 48,
                    "value_cv": 1.5,
                    "value_dist": "planted_early_instruction",
                },
                "estimator": {"kind": "oracle", "unit_cost": 0.05},
                "policy": {"kind": "greedy", "step_cost": 0.05},
                "granularity": {"block_size": 16},
            }
        )
        result = run(cfg)
        totals = {k.value: v[0] for k, v in result.ledger.summarize_by_class().items()}
        assert totals == result.metrics.per_class_counts


class TestVerificationOverhead:
    def test_ratio(self):
        assert verification_overhead(2.0, 100.0) == pytest.approx(0.02)

    def test_zero_cost(self):
        assert verification_overhead(0.0, 50.0) == 0.0

    def test_zero_inference_rejected(self):
        with pytest.raises(ValueError, match="> 0"):
            verification_overhead(1.0, 0.0)

    def test_hash_cost_model_one_unit_per_record(self):
        ledger = build_ledger(42)
        assert ledger.hashing_cost_units == 42.0


class TestCanonicalSerialization:
    def test_fixed_width_and_field_order(self):
        entry = Ledger().record(3, TokenClass.TOOL, 9, 2.5, "pid")
        blob = canonical_entry_bytes(entry)
        assert blob.endswith(entry.prev_digest)
        assert entry_digest(entry) == entry_digest(entry)

    def test_negative_count_rejected(self):
        with pytest.raises(ValueError, match="count"):
            LedgerEntry(0, 0, TokenClass.INPUT, -1, 0, "p", GENESIS_DIGEST)

    def test_prev_digest_length_enforced(self):
        with pytest.raises(ValueError, match="32 bytes"):
            LedgerEntry(0, 0, TokenClass.INPUT, 1, 0, "p", b"\x00" * 8)
