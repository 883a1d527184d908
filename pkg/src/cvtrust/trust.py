"""Trust-points chain: voting, redressing and record-transfer contracts.

Record fields kept in a region's trust ledger:

``tp``      trust points (new vehicles start at 0, sanctions set exactly -1)
``pot``     copy of accumulated proof-of-travel credits used for stake
``active``  1 while the region is the vehicle's active region, else 0
"""
from __future__ import annotations

import copy
import enum
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

from . import consensus
from .chain import (
    Block,
    BlockKind,
    Ledger,
    Location,
    RegionRegistry,
    Scid,
    StateUpdate,
    Transaction,
    VehicleId,
    append_block,
    verify,
)

logger = logging.getLogger(__name__)

SANCTION = -1


class Opinion(str, enum.Enum):
    Agree = "agree"
    Disagree = "disagree"


class ContractStatus(enum.Enum):
    Open = "open"
    Closed = "closed"
    Redressed = "redressed"


class Verdict(enum.Enum):
    DebateUpheld = "upheld"
    DebateCondemned = "condemned"
    Tie = "tie"


@dataclass
class TrustParams:
    tb_s: int = 1000               # ms, regional propagation bound
    match_radius: float = 600.0    # m, twice the default communication range
    n_th: float = 5.0              # stake margin needed to redress
    border_threshold: float = 500.0

    def __post_init__(self):
        if self.tb_s <= 0:
            raise ValueError("tb_s must be positive")


@dataclass(frozen=True)
class TrustRecord:
    vehicle: VehicleId
    trust_points: int
    active_region: int


@dataclass
class VotingContract:
    debate: VehicleId
    opened_at: int
    origin_location: Location
    agree: set = field(default_factory=set)
    disagree: set = field(default_factory=set)
    status: ContractStatus = ContractStatus.Open
    verdict: Optional[Verdict] = None
    cid: int = 0
    closed_at: Optional[int] = None

    @property
    def participants(self) -> set:
        return self.agree | self.disagree


@dataclass
class ContractTable:
    contracts: list = field(default_factory=list)
    audit: list = field(default_factory=list)

    def log(self, event: str, **info) -> None:
        self.audit.append({"event": event, **info})

    def open_contracts(self) -> list:
        return [c for c in self.contracts if c.status is ContractStatus.Open]

    def history(self, debate: Optional[VehicleId] = None) -> list:
        return [c for c in self.contracts if c.status is not ContractStatus.Open
                and (debate is None or c.debate == debate)]


def _distance(a: Location, b: Location) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def handle_disagreement(tx: Transaction, now: int, contracts: ContractTable,
                        params: TrustParams = TrustParams()) -> ContractTable:
    """Record one stance about ``tx.debate``'s message.

    Payload: ``opinion`` ("agree"/"disagree"; PotDispute transactions always
    disagree) and ``message_time``, the time the suspicious message was
    received. Stances later than 2*tb_s after that receipt are dropped.
    """
    window = 2 * params.tb_s
    if tx.scid not in (Scid.Disagreement, Scid.PotDispute) or not verify(tx):
        contracts.log("rejected", tid=tx.tid.hex(), reason="invalid")
        return contracts
    opinion = Opinion.Disagree if tx.scid is Scid.PotDispute else Opinion(tx.payload.get("opinion", "disagree"))
    msg_time = int(tx.payload.get("message_time", tx.time))
    if tx.time - msg_time > window or tx.time < msg_time or tx.time > now:
        contracts.log("stale", tid=tx.tid.hex(), sender=tx.sender.label, debate=tx.debate.label,
                      time=tx.time, message_time=msg_time)
        return contracts
    if tx.sender == tx.debate:
        return contracts
    match = None
    for c in contracts.open_contracts():
        if (c.debate == tx.debate
                and _distance(c.origin_location, tx.location) <= params.match_radius
                and abs(tx.time - c.opened_at) <= window):
            match = c
            break
    if match is not None and tx.sender in match.participants:
        contracts.log("duplicate", cid=match.cid, sender=tx.sender.label)
        return contracts
    if match is None:
        match = VotingContract(tx.debate, tx.time, tx.location, cid=len(contracts.contracts))
        contracts.contracts.append(match)
        contracts.log("contract_opened", cid=match.cid, debate=tx.debate.label, time=tx.time)
    (match.agree if opinion is Opinion.Agree else match.disagree).add(tx.sender)
    contracts.log("stance", cid=match.cid, sender=tx.sender.label, opinion=opinion.value, time=tx.time)
    return contracts


def _stake(group: Iterable[VehicleId], stakes: Mapping[VehicleId, float]) -> float:
    return float(sum(stakes.get(v, 0.0) for v in group))


def _reward(group, sanction) -> list:
    ups = [StateUpdate(v, "tp", "add", 1) for v in sorted(group)]
    ups += [StateUpdate(v, "tp", "set", SANCTION) for v in sorted(sanction)]
    return ups


def close_contract(c: VotingContract, stakes: Mapping[VehicleId, float], now: int,
                   params: TrustParams = TrustParams()) -> tuple[Verdict, list]:
    """Decide a contract whose 2*tb_s window has elapsed.

    The debated vehicle has no vote on its own message but shares the agree
    group's fate. An uncontested message is upheld; equal stakes are a tie
    and change nothing.
    """
    if now - c.opened_at < 2 * params.tb_s:
        raise ValueError("contract window has not elapsed")
    agree = c.agree - {c.debate}
    disagree = c.disagree - agree - {c.debate}
    if not disagree:
        verdict = Verdict.DebateUpheld
    else:
        a, d = _stake(agree, stakes), _stake(disagree, stakes)
        verdict = (Verdict.DebateUpheld if a > d
                   else Verdict.DebateCondemned if d > a else Verdict.Tie)
    if verdict is Verdict.DebateUpheld:
        updates = _reward(agree | {c.debate}, disagree)
    elif verdict is Verdict.DebateCondemned:
        updates = _reward(disagree, agree | {c.debate})
    else:
        updates = []
    c.status, c.verdict, c.closed_at = ContractStatus.Closed, verdict, now
    return verdict, updates


@dataclass(frozen=True)
class RedressResult:
    debate: VehicleId
    fired: bool
    margin: float
    supporters: frozenset
    opponents: frozenset
    contracts: tuple = ()
    updates: tuple = ()


def handle_redress(tx: Transaction, history: Sequence[VotingContract],
                   stakes: Mapping[VehicleId, float], n_th: float = 5.0,
                   evidence: Iterable[VehicleId] = ()) -> Optional[RedressResult]:
    """Re-evaluate every upheld contract about ``tx.debate``.

    Supporters are the debated vehicle plus all agree groups; opponents are
    all disagree groups plus every vehicle that filed a redress request
    (``tx.sender`` and ``evidence``). Fires when opponents' stake exceeds
    supporters' by more than ``n_th``. Returns None when nothing qualifies.
    """
    if tx.scid is not Scid.RedressRequest or not verify(tx):
        return None
    upheld = [c for c in history if c.debate == tx.debate
              and c.status is ContractStatus.Closed and c.verdict is Verdict.DebateUpheld]
    if not upheld:
        return None
    supporters = {tx.debate}.union(*(c.agree for c in upheld))
    opponents = set().union(*(c.disagree for c in upheld)) | {tx.sender} | set(evidence)
    opponents -= supporters
    margin = _stake(opponents, stakes) - _stake(supporters, stakes)
    if not margin > n_th:
        return RedressResult(tx.debate, False, margin, frozenset(supporters), frozenset(opponents))
    for c in upheld:
        c.status = ContractStatus.Redressed
    return RedressResult(tx.debate, True, margin, frozenset(supporters), frozenset(opponents),
                         tuple(c.cid for c in upheld), tuple(_reward(opponents, supporters)))


class TransferRejected(ValueError):
    pass


@dataclass(frozen=True)
class TransferResult:
    vehicle: VehicleId
    origin: int
    destination: int
    destination_updates: tuple
    origin_updates: tuple


def handle_transfer(tx: Transaction, origin: Ledger, destination: Ledger,
                    registry: RegionRegistry, border_threshold: float = 500.0) -> TransferResult:
    """Move trust points and copy credits from ``origin`` to ``destination``.

    The destination updates must be committed first; the origin updates
    (trust reset to 0, active flag cleared) follow once they are.
    """
    if tx.scid is not Scid.TransferRequest or not verify(tx):
        raise TransferRejected("not a valid transfer request")
    if tx.region != destination.region or tx.region not in registry:
        raise TransferRejected(f"unknown destination region {tx.region}")
    if not registry.are_neighbors(origin.region, destination.region):
        raise TransferRejected(f"regions {origin.region} and {destination.region} are not neighbours")
    gap = registry.border_distance(origin.region, destination.region, tx.location)
    if gap > border_threshold:
        raise TransferRejected(f"{gap:.0f} m from the border")
    v = tx.sender
    tp = origin.get(v, "tp", 0)
    pot = origin.get(v, "pot", 0.0)
    dest = (StateUpdate(v, "tp", "set", tp), StateUpdate(v, "pot", "set", pot),
            StateUpdate(v, "active", "set", 1))
    orig = (StateUpdate(v, "tp", "set", 0), StateUpdate(v, "active", "set", 0))
    return TransferResult(v, origin.region, destination.region, dest, orig)


def canonical_order(pending: Iterable[Transaction]) -> list:
    return sorted(pending, key=lambda tx: (tx.time, tx.tid))


class RegionChain:
    """Trust-points chain of one region: pending pool, contract engine and ledger.

    ``pot_of`` supplies accumulated proof-of-travel credits for stake; when it
    is None the ``pot`` field of the trust ledger is used. With
    ``consensus=True`` each round's block is put to a stake-weighted committee
    and an empty block is appended when the quorum fails.
    """

    def __init__(self, region: int, params: Optional[TrustParams] = None, *,
                 pot_of: Optional[Callable[[VehicleId], float]] = None,
                 registry: Optional[RegionRegistry] = None,
                 consensus: bool = True, n_proposers: int = consensus.DEFAULT_PROPOSERS,
                 n_verifiers: int = 50, summary_every: int = 0,
                 votes: Optional[Callable[[VehicleId, Block], bool]] = None):
        self.region = region
        self.params = params or TrustParams()
        self.pot_of = pot_of
        self.registry = registry
        self.use_consensus = consensus
        self.n_proposers = n_proposers
        self.n_verifiers = n_verifiers
        self.summary_every = summary_every
        self.votes = votes
        self.ledger = Ledger(region)
        self.contracts = ContractTable()
        self.pending: list = []
        self.queued_updates: list = []
        self.evidence: dict = {}
        self.redress_requests: dict = {}
        self.audit: list = []
        self.redress_log: list = []

    # -- population ---------------------------------------------------------
    def register(self, vehicle: VehicleId, pot: float = 0.0) -> None:
        """Queue an activation; the vehicle holds stake once a block carries it."""
        self.queued_updates += [StateUpdate(vehicle, "active", "set", 1),
                                StateUpdate(vehicle, "pot", "set", pot)]

    def genesis(self, now: int = 0) -> Block:
        """Commit the queued registrations without a committee (nobody has stake yet)."""
        if len(self.ledger):
            raise ValueError("genesis block already present")
        block = Block(self.region, 0, self.ledger.head_hash, BlockKind.Normal, (),
                      tuple(self.queued_updates), None, now)
        self.queued_updates = []
        self.ledger = append_block(self.ledger, block)
        self.audit.append({"round": 0, "time": now, "region": self.region, "events": [],
                           "committee": None, "committed": True, "genesis": True})
        return block

    @property
    def active(self) -> list:
        return sorted(v for v, rec in self.ledger.state.items() if rec.get("active") == 1)

    def trust_points(self, vehicle: VehicleId) -> int:
        return self.ledger.get(vehicle, "tp", 0)

    def stake_view(self) -> consensus.StakeView:
        """Stakes over the committed active population."""
        active = self.active
        tp = {v: self.trust_points(v) for v in active}
        pot = {v: (self.pot_of(v) if self.pot_of else self.ledger.get(v, "pot", 0.0))
               for v in active}
        return consensus.compute_stake(tp, pot, self.region)

    def submit(self, tx: Transaction) -> None:
        self.pending.append(tx)

    # -- rounds -------------------------------------------------------------
    def build_round_block(self, now: int, stakes: Optional[Mapping] = None) -> Block:
        """Apply the contracts to the pending pool and assemble this round's block."""
        round_ = self.ledger.next_round
        stakes = self.stake_view().stakes if stakes is None else stakes
        table = self.contracts
        mark = len(table.audit)
        included, updates = [], list(self.queued_updates)
        redress_txs = []
        for tx in canonical_order(self.pending):
            if tx.time > now:
                continue
            if not verify(tx):
                table.log("rejected", tid=tx.tid.hex(), reason="bad signature")
                continue
            included.append(tx)
            if tx.scid in (Scid.Disagreement, Scid.PotDispute):
                handle_disagreement(tx, now, table, self.params)
            elif tx.scid is Scid.RedressRequest:
                redress_txs.append(tx)
        for c in table.open_contracts():
            if now - c.opened_at >= 2 * self.params.tb_s:
                verdict, ups = close_contract(c, stakes, now, self.params)
                updates += ups
                table.log("contract_closed", cid=c.cid, debate=c.debate.label, verdict=verdict.value,
                          agree=sorted(v.label for v in c.agree | {c.debate}),
                          disagree=sorted(v.label for v in c.disagree), time=now)
        for tx in redress_txs:
            self.evidence.setdefault(tx.debate, set()).add(tx.sender)
            self.redress_requests[tx.debate] = tx
        # evidence stays live across rounds: stakes move even without new requests
        for debate in sorted(self.evidence):
            ev = self.evidence[debate]
            if not ev:
                continue
            res = handle_redress(self.redress_requests[debate], table.history(debate), stakes,
                                 self.params.n_th, ev)
            if res is None:
                continue
            self.redress_log.append({"round": round_, "time": now, "debate": debate.label,
                                     "margin": res.margin, "fired": res.fired,
                                     "supporters": sorted(v.label for v in res.supporters),
                                     "opponents": sorted(v.label for v in res.opponents)})
            table.log("redress", debate=debate.label, margin=res.margin, fired=res.fired, time=now)
            if res.fired:
                updates += res.updates
                ev.clear()
        kind = BlockKind.Normal
        if self.summary_every and round_ > 0 and round_ % self.summary_every == 0:
            kind = BlockKind.Summary
            preview = dict(self.ledger.state)
            preview = {k: dict(v) for k, v in preview.items()}
            for u in updates:
                u.apply(preview)
            updates = [StateUpdate(v, f, "set", val) for v in sorted(preview)
                       for f, val in sorted(preview[v].items())]
        block = Block(self.region, round_, self.ledger.head_hash, kind, tuple(included),
                      tuple(updates), None, now)
        self._round_audit = table.audit[mark:]
        self._consumed = {tx.tid for tx in included}
        return block

    def step(self, now: int) -> Block:
        """Run one round at time ``now``: build, agree, append."""
        round_ = self.ledger.next_round
        saved = (copy.deepcopy(self.contracts), copy.deepcopy(self.evidence),
                 dict(self.redress_requests), len(self.redress_log))
        view = self.stake_view()
        block = self.build_round_block(now, view.stakes)
        entry = {"round": round_, "time": now, "region": self.region,
                 "events": self._round_audit}
        committed = True
        if self.use_consensus:
            seed = consensus.round_seed(self.region, round_, self.ledger.head_hash)
            try:
                committee = consensus.select_committee(view, seed, self.n_proposers,
                                                       self.n_verifiers, round_)
            except consensus.NoCommitteeError:
                committee = None
            if committee is None:
                committed = False
                entry["committee"] = None
            else:
                block = Block(block.region, block.round, block.prev_hash, block.kind,
                              block.transactions, block.state_updates, committee.leader,
                              block.timestamp)
                outcome = consensus.run_round(committee, block, self.votes or (lambda v, b: True))
                committed = outcome.committed
                entry["committee"] = {"leader": committee.leader.label,
                                      "verifiers": [v.label for v in committee.verifiers],
                                      "yes_stake": outcome.yes_stake,
                                      "total_stake": outcome.total_stake}
        if committed:
            self.pending = [tx for tx in self.pending if tx.tid not in self._consumed]
            self.queued_updates = []
        else:
            self.contracts, self.evidence, self.redress_requests = saved[0], saved[1], saved[2]
            del self.redress_log[saved[3]:]
            block = Block(self.region, round_, self.ledger.head_hash, BlockKind.Normal, (), (),
                          None, now)
            entry["events"] = []
        entry["committed"] = committed
        self.ledger = append_block(self.ledger, block)
        self.audit.append(entry)
        return block


def build_round_block(chain: RegionChain, pending: Sequence[Transaction], now: int) -> Block:
    """Deterministic block for ``pending`` on top of ``chain`` (state not advanced)."""
    probe = copy.deepcopy(chain)
    probe.pending = list(pending)
    return probe.build_round_block(now)
