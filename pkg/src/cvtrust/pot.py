"""Proof-of-travel chain: message-count reports, credits, pre-blocks and merge.

A vehicle's credits for one period are the number of its messages counted by
every other vehicle; the accumulated value discounts older periods
geometrically over a sliding window. Regions first agree on a pre-block built
from the reports they saw, then exchange foreign entries so that each region's
final block credits exactly its own permanent vehicles.
"""
from __future__ import annotations

import csv
import io
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .chain import (
    Block,
    BlockKind,
    KeyPair,
    Location,
    Scid,
    StateUpdate,
    Transaction,
    VehicleId,
    make_transaction,
)

logger = logging.getLogger(__name__)

DAY_MS = 24 * 3600 * 1000
DEFAULT_PERIOD_MS = DAY_MS
DEFAULT_N_SUM = 100
DEFAULT_ALPHA = 0.9
DEFAULT_MESSAGE_RATE = 10.0   # Hz
MAX_ENTRIES = 500
DISPUTE_TOLERANCE = 0.05


@dataclass(frozen=True)
class PotReportTx:
    """Counts of messages ``reporter`` received from each sender in one period."""

    reporter: VehicleId
    period_index: int
    counts: Mapping[VehicleId, int]

    def __post_init__(self):
        if self.reporter in self.counts:
            raise ValueError("a reporter cannot count its own messages")
        if any(int(n) != n or n < 0 for n in self.counts.values()):
            raise ValueError("counts must be non-negative integers")

    @classmethod
    def capped(cls, reporter: VehicleId, period_index: int, counts: Mapping[VehicleId, int], *,
               max_entries: int = MAX_ENTRIES, message_rate: float = DEFAULT_MESSAGE_RATE,
               period_ms: int = DEFAULT_PERIOD_MS) -> "PotReportTx":
        """Build a report keeping the ``max_entries`` highest counts.

        Raises if any count exceeds what a sender can physically broadcast in a
        period.
        """
        budget = message_rate * period_ms / 1000.0
        if any(n > budget for n in counts.values()):
            raise ValueError(f"count exceeds the broadcast budget of {budget:.0f} messages")
        kept = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:max_entries]
        return cls(reporter, period_index, dict(kept))

    def to_transaction(self, keypair: KeyPair, location: Location, time: int) -> Transaction:
        body = {"period": self.period_index,
                "counts": [[v.permanent_region, v.index, v.public_key.hex(), int(n)]
                           for v, n in sorted(self.counts.items())]}
        return make_transaction(keypair, self.reporter, Scid.PotReport,
                                location=location, time=time, payload=body)

    @classmethod
    def from_transaction(cls, tx: Transaction) -> "PotReportTx":
        if tx.scid is not Scid.PotReport:
            raise ValueError("not a proof-of-travel report")
        counts = {VehicleId(r, i, bytes.fromhex(pk)): n for r, i, pk, n in tx.payload["counts"]}
        return cls(tx.sender, int(tx.payload["period"]), counts)


def dedupe_reports(reports: Iterable[PotReportTx], disputes: Optional[list] = None) -> list:
    """First report per (reporter, period) wins; conflicting repeats are flagged."""
    seen: dict = {}
    for r in reports:
        key = (r.reporter, r.period_index)
        if key not in seen:
            seen[key] = r
        elif dict(seen[key].counts) != dict(r.counts):
            logger.info("conflicting report from %s in period %d", r.reporter, r.period_index)
            if disputes is not None:
                disputes.append(r)
    return list(seen.values())


def compute_period_credits(reports: Iterable[PotReportTx],
                           disputes: Optional[list] = None) -> dict:
    """Per-vehicle credits for one period: the sum of every reporter's count."""
    credits: dict = defaultdict(int)
    for r in dedupe_reports(reports, disputes):
        for v, n in r.counts.items():
            credits[v] += int(n)
    return dict(credits)


def discounted_sum(history: Sequence[float], alpha: float, n_sum: int) -> float:
    """Newest-last ``history``; sum of alpha**k times the k-th most recent entry, k < n_sum."""
    window = list(history)[::-1][:n_sum]
    return float(sum(alpha ** k * c for k, c in enumerate(window)))


@dataclass(frozen=True)
class PotRecord:
    vehicle: VehicleId
    credits_by_period: tuple = ()
    accumulated: float = 0.0


def accumulate(record: PotRecord, new_period: int, alpha: float = DEFAULT_ALPHA,
               n_sum: int = DEFAULT_N_SUM) -> PotRecord:
    if not 0 < alpha <= 1:
        raise ValueError("alpha must lie in (0, 1]")
    if n_sum < 1:
        raise ValueError("n_sum must be at least 1")
    if new_period < 0:
        raise ValueError("period credits are non-negative")
    history = record.credits_by_period + (int(new_period),)
    return PotRecord(record.vehicle, history, discounted_sum(history, alpha, n_sum))


@dataclass(frozen=True)
class PreBlock:
    region: int
    period_index: int
    partial_credits: Mapping[VehicleId, int]
    exports: frozenset = frozenset()

    @property
    def local(self) -> dict:
        return {v: n for v, n in self.partial_credits.items() if v not in self.exports}


def build_pre_block(region: int, reports: Iterable[PotReportTx], period: int,
                    disputes: Optional[list] = None) -> PreBlock:
    credits = compute_period_credits([r for r in reports if r.period_index == period], disputes)
    exports = frozenset(v for v in credits if v.permanent_region != region)
    return PreBlock(region, period, credits, exports)


@dataclass
class MergeResult:
    blocks: dict = field(default_factory=dict)
    missing: list = field(default_factory=list)

    def credits(self, region: int) -> dict:
        return {u.vehicle: u.value for u in self.blocks[region].state_updates}


def merge_final_blocks(pre_blocks: Iterable[PreBlock], regions: Optional[Iterable[int]] = None, *,
                       prev_hashes: Optional[Mapping[int, bytes]] = None,
                       rounds: Optional[Mapping[int, int]] = None,
                       timestamp: int = 0) -> MergeResult:
    """Route every pre-block entry to its permanent region and build Final blocks.

    A region listed in ``regions`` without a pre-block still gets a Final
    block; its absence is flagged in ``missing``.
    """
    pre_blocks = list(pre_blocks)
    periods = {p.period_index for p in pre_blocks}
    if len(periods) > 1:
        raise ValueError("pre-blocks span several periods")
    period = periods.pop() if periods else 0
    present = {p.region for p in pre_blocks}
    if len(present) != len(pre_blocks):
        raise ValueError("more than one pre-block per region")
    expected = set(regions) if regions is not None else set(present)
    result = MergeResult(missing=sorted(expected - present))
    for r in result.missing:
        logger.warning("no pre-block from region %d for period %d", r, period)
    totals: dict = defaultdict(lambda: defaultdict(int))
    for p in sorted(pre_blocks, key=lambda p: p.region):
        for v, n in p.partial_credits.items():
            totals[v.permanent_region][v] += n
    for r in sorted(expected | set(totals)):
        ups = tuple(StateUpdate(v, "pot_period", "set", int(n)) for v, n in sorted(totals[r].items()))
        result.blocks[r] = Block(r, (rounds or {}).get(r, period),
                                 (prev_hashes or {}).get(r, bytes(32)), BlockKind.Final, (), ups,
                                 None, timestamp)
    return result


def flag_count_dispute(report: PotReportTx, observed_truth: Mapping[VehicleId, int], *,
                       flagger: VehicleId, keypair: KeyPair, location: Location, time: int,
                       tolerance: float = DISPUTE_TOLERANCE) -> Optional[Transaction]:
    """Dispute ``report`` if any count strays more than ``tolerance`` from the truth.

    The returned transaction names the reporter as debate subject and is
    decided by the trust chain's voting contract.
    """
    bad = []
    for v, n in report.counts.items():
        true = observed_truth.get(v, 0)
        if abs(n - true) > tolerance * true or (true == 0 and n > 0):
            bad.append([v.label, int(n), int(true)])
    if not bad:
        return None
    return make_transaction(keypair, flagger, Scid.PotDispute, debate=report.reporter,
                            location=location, time=time,
                            payload={"period": report.period_index, "message_time": time,
                                     "entries": bad})


class PotLedgerBook:
    """Per-vehicle credit histories for the permanent vehicles of several regions."""

    def __init__(self, alpha: float = DEFAULT_ALPHA, n_sum: int = DEFAULT_N_SUM):
        self.alpha, self.n_sum = alpha, n_sum
        self.records: dict = {}
        self.periods: list = []

    def accumulated(self, vehicle: VehicleId) -> float:
        rec = self.records.get(vehicle)
        return rec.accumulated if rec else 0.0

    def apply_period(self, period: int, merged: MergeResult) -> None:
        credited = {}
        for r in sorted(merged.blocks):
            credited.update(merged.credits(r))
        for v in sorted(set(self.records) | set(credited)):
            rec = self.records.get(v, PotRecord(v))
            self.records[v] = accumulate(rec, int(credited.get(v, 0)), self.alpha, self.n_sum)
        self.periods.append(period)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["period", "vehicle", "region", "period_credits", "accumulated"])
        for v in sorted(self.records):
            rec = self.records[v]
            hist = rec.credits_by_period
            offset = len(self.periods) - len(hist)
            for k, c in enumerate(hist):
                acc = discounted_sum(hist[:k + 1], self.alpha, self.n_sum)
                w.writerow([self.periods[offset + k], v.label, v.permanent_region, c, repr(acc)])
        return buf.getvalue()
