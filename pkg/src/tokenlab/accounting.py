"""Hash-chained per-class token ledger with tamper detection.

Entries are hashed over a canonical serialization: fixed field order,
fixed-width integers, costs as scaled integers (never floats), with the
predecessor digest mixed into each entry's digest. The genesis predecessor is
32 zero bytes. A linear chain suffices for append-only desk-scale audit.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from .core import TokenClass

GENESIS_DIGEST = b"\x00" * 32
COST_SCALE = 10**6
HASH_COST_UNITS_PER_RECORD = 1.0

_CLASS_CODE = {cls: i for i, cls in enumerate(TokenClass)}
_CODE_CLASS = {i: cls for cls, i in _CLASS_CODE.items()}


@dataclass(frozen=True, slots=True)
class LedgerEntry:
    sequence: int
    step: int
    token_class: TokenClass
    count: int
    cost_scaled: int
    policy_id: str
    prev_digest: bytes

    def __post_init__(self) -> None:
        if self.sequence < 0:
            raise ValueError("sequence must be >= 0")
        if self.count < 0:
            raise ValueError("count must be >= 0")
        if len(self.prev_digest) != 32:
            raise ValueError("prev_digest must be 32 bytes")

    @property
    def cost_units(self) -> float:
        return self.cost_scaled / COST_SCALE


def canonical_entry_bytes(entry: LedgerEntry) -> bytes:
    pid = entry.policy_id.encode("utf-8")
    head = struct.pack(
        "<QQBQqI",
        entry.sequence,
        entry.step,
        _CLASS_CODE[entry.token_class],
        entry.count,
        entry.cost_scaled,
        len(pid),
    )
    return head + pid + entry.prev_digest


def entry_digest(entry: LedgerEntry) -> bytes:
    return hashlib.sha256(canonical_entry_bytes(entry)).digest()


class Ledger:
    """Append-only chained ledger; single writer, concurrent read-only verification."""

    def __init__(self) -> None:
        self.entries: list[LedgerEntry] = []
        self.digests: list[bytes] = []

    @property
    def head_digest(self) -> bytes:
        return self.digests[-1] if self.digests else GENESIS_DIGEST

    @property
    def head_hex(self) -> str:
        return self.head_digest.hex()

    @property
    def hashing_cost_units(self) -> float:
        return HASH_COST_UNITS_PER_RECORD * len(self.entries)

    def record(
        self,
        step: int,
        token_class: TokenClass,
        count: int,
        cost_units: float,
        policy_id: str,
    ) -> LedgerEntry:
        entry = LedgerEntry(
            sequence=len(self.entries),
            step=step,
            token_class=token_class,
            count=count,
            cost_scaled=round(cost_units * COST_SCALE),
            policy_id=policy_id,
            prev_digest=self.head_digest,
        )
        self.entries.append(entry)
        self.digests.append(entry_digest(entry))
        return entry

    def verify_chain(self) -> int | None:
        """Recompute the whole chain; None if intact, else first tampered sequence."""
        running = GENESIS_DIGEST
        for i, entry in enumerate(self.entries):
            if entry.sequence != i:
                return i
            if entry.prev_digest != running:
                return i
            recomputed = entry_digest(entry)
            if recomputed != self.digests[i]:
                return i
            running = recomputed
        return None

    def summarize_by_class(self) -> dict[TokenClass, tuple[int, float]]:
        """Per-class (count, cost units) totals over the verified chain."""
        totals: dict[TokenClass, tuple[int, float]] = {}
        for entry in self.entries:
            count, cost = totals.get(entry.token_class, (0, 0.0))
            totals[entry.token_class] = (
                count + entry.count,
                cost + entry.cost_units,
            )
        return totals

    def to_bytes(self) -> bytes:
        """Binary length-prefixed records, each followed by its 32-byte digest."""
        chunks = [struct.pack("<I", len(self.entries))]
        for entry, digest in zip(self.entries, self.digests):
            body = canonical_entry_bytes(entry)
            chunks.append(struct.pack("<I", len(body)))
            chunks.append(body)
            chunks.append(digest)
        return b"".join(chunks)

    @staticmethod
    def from_bytes(blob: bytes) -> "Ledger":
        ledger = Ledger()
        offset = 0
        (n,) = struct.unpack_from("<I", blob, offset)
        offset += 4
        for _ in range(n):
            (body_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            body = blob[offset : offset + body_len]
            if len(body) != body_len:
                raise ValueError("truncated ledger record")
            offset += body_len
            digest = blob[offset : offset + 32]
            if len(digest) != 32:
                raise ValueError("truncated ledger digest")
            offset += 32
            seq, step, cls_code, count, cost_scaled, pid_len = struct.unpack_from(
                "<QQBQqI", body, 0
            )
            fixed = struct.calcsize("<QQBQqI")
            pid = body[fixed : fixed + pid_len].decode("utf-8")
            prev = body[fixed + pid_len : fixed + pid_len + 32]
            if len(prev) != 32:
                raise ValueError("malformed ledger record")
            if cls_code not in _CODE_CLASS:
                raise ValueError(f"unknown token class code {cls_code}")
            ledger.entries.append(
                LedgerEntry(
                    sequence=seq,
                    step=step,
                    token_class=_CODE_CLASS[cls_code],
                    count=count,
                    cost_scaled=cost_scaled,
                    policy_id=pid,
                    prev_digest=prev,
                )
            )
            ledger.digests.append(digest)
        if offset != len(blob):
            raise ValueError("trailing bytes after ledger records")
        return ledger

    def to_text(self) -> str:
        lines = ["sequence\tstep\tclass\tcount\tcost_units\tpolicy_id\tprev_digest\tdigest"]
        for entry, digest in zip(self.entries, self.digests):
            lines.append(
                f"{entry.sequence}\t{entry.step}\t{entry.token_class.value}\t"
                f"{entry.count}\t{entry.cost_units:.6f}\t{entry.policy_id}\t"
                f"{entry.prev_digest.hex()}\t{digest.hex()}"
            )
        lines.append(f"head\t{self.head_hex}")
        return "\n".join(lines) + "\n"


def verification_overhead(verification_cost: float, inference_cost: float) -> float:
    """Ratio of evidence production/checking cost to base simulated inference cost."""
    if inference_cost <= 0:
        raise ValueError("base inference cost must be > 0")
    return verification_cost / inference_cost
