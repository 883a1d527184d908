"""Discrete-event plumbing shared by the scenarios.

Time is integer milliseconds. Events are ordered by (time, insertion
sequence), so equal-time events run in the order they were scheduled.
"""
from __future__ import annotations

import csv
import enum
import hashlib
import heapq
import io
import itertools
import json
import math
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Sequence

import numpy as np

from ..chain import KeyPair, VehicleId
from ..trust import Opinion

POSITION_TOLERANCE = 5.0   # m
SPEED_TOLERANCE = 2.0      # m/s


class EventKind(enum.Enum):
    VehicleArrival = "VehicleArrival"
    MessageBroadcast = "MessageBroadcast"
    MessageDelivery = "MessageDelivery"
    RoundBoundary = "RoundBoundary"
    PotPeriodBoundary = "PotPeriodBoundary"
    AttackTrigger = "AttackTrigger"
    MetricSample = "MetricSample"
    Tick = "Tick"                  # mobility integration step


@dataclass(order=True)
class SimEvent:
    time: int
    seq: int
    kind: EventKind = field(compare=False)
    payload: Any = field(compare=False, default=None)


class EventQueue:
    def __init__(self):
        self._heap: list = []
        self._seq = itertools.count()
        self.now = 0

    def __len__(self):
        return len(self._heap)

    def schedule(self, time: int, kind: EventKind, payload=None) -> SimEvent:
        if time < self.now:
            raise ValueError(f"cannot schedule into the past ({time} < {self.now})")
        ev = SimEvent(int(time), next(self._seq), kind, payload)
        heapq.heappush(self._heap, ev)
        return ev

    def pop(self) -> SimEvent:
        ev = heapq.heappop(self._heap)
        self.now = ev.time
        return ev

    def peek_time(self) -> Optional[int]:
        return self._heap[0].time if self._heap else None


class Behavior(str, enum.Enum):
    Normal = "Normal"
    Cautious = "Cautious"


class NoOpinion:
    """Sentinel for an observer that cannot examine the claim."""

    def __repr__(self):
        return "NoOpinion"


NO_OPINION = NoOpinion()


@dataclass
class VehicleAgent:
    id: VehicleId
    keypair: KeyPair = field(repr=False)
    position: tuple = (0.0, 0.0)
    speed: float = 0.0
    honest: bool = True
    sybil_parent: Optional[VehicleId] = None
    comm_range: float = 300.0
    exam_range: float = 100.0
    active_region: int = 0
    behavior_mode: Behavior = Behavior.Normal
    pot: float = 0.0
    tp: int = 0
    scripted_opinion: Opinion = Opinion.Agree

    def __post_init__(self):
        if self.exam_range > self.comm_range:
            raise ValueError("exam_range cannot exceed comm_range")

    @property
    def is_sybil(self) -> bool:
        return self.sybil_parent is not None


@dataclass(frozen=True)
class Claim:
    """A position/velocity statement broadcast by ``subject``."""

    subject: VehicleId
    position: tuple
    speed: float
    time: int


def _dist(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def in_range(sender_pos, agents: Sequence[VehicleAgent], radius: float) -> list:
    if not agents:
        return []
    pos = np.array([a.position for a in agents], dtype=float).reshape(-1, 2)
    d = np.hypot(pos[:, 0] - sender_pos[0], pos[:, 1] - sender_pos[1])
    return [agents[i] for i in np.flatnonzero(d <= radius)]


def broadcast(sender: VehicleAgent, message, now: int, agents: Sequence[VehicleAgent],
              rng: np.random.Generator, tb_s: int) -> list:
    """Schedule delivery of ``message`` to every other agent within the sender's range.

    Returns ``(time, receiver, message)`` tuples with delays uniform on
    ``1..tb_s`` ms, one draw per receiver in the order of ``agents``.
    """
    others = [a for a in agents if a.id != sender.id]
    hits = in_range(sender.position, others, sender.comm_range)
    if not hits:
        return []
    delays = rng.integers(1, tb_s + 1, size=len(hits))
    return [(now + int(d), a, message) for d, a in zip(delays, hits)]


def can_examine(observer: VehicleAgent, claim: Claim, true_position) -> bool:
    """The observer sees the subject itself or the spot the subject claims to occupy."""
    return (_dist(observer.position, true_position) <= observer.exam_range
            or _dist(observer.position, claim.position) <= observer.exam_range)


def physical_verify(observer: VehicleAgent, claim: Claim, truth: tuple, *,
                    epsilon: float = 0.0, rng: Optional[np.random.Generator] = None,
                    position_tolerance: float = POSITION_TOLERANCE,
                    speed_tolerance: float = SPEED_TOLERANCE):
    """Sensor oracle. ``truth`` is the subject's actual ``(position, speed)``.

    Honest observers flip their opinion with probability ``epsilon``;
    dishonest ones answer with their scripted opinion.
    """
    true_pos, true_speed = truth
    if not can_examine(observer, claim, true_pos):
        return NO_OPINION
    if not observer.honest:
        return observer.scripted_opinion
    ok = (_dist(claim.position, true_pos) <= position_tolerance
          and abs(claim.speed - true_speed) <= speed_tolerance)
    if epsilon > 0 and rng is not None and rng.random() < epsilon:
        ok = not ok
    return Opinion.Agree if ok else Opinion.Disagree


def inject_sybil(parent: VehicleAgent, count: int, rng: np.random.Generator,
                 first_index: int) -> list:
    """Fabricated identities controlled by ``parent``: fresh keys, no credits, no trust."""
    if count < 1:
        raise ValueError("count must be at least 1")
    out = []
    for k in range(count):
        kp = KeyPair.generate(rng)
        vid = VehicleId(parent.id.permanent_region, first_index + k, kp.public_key)
        out.append(VehicleAgent(vid, kp, position=tuple(parent.position), speed=parent.speed,
                                honest=False, sybil_parent=parent.id,
                                comm_range=parent.comm_range, exam_range=parent.exam_range,
                                active_region=parent.active_region, pot=0.0, tp=0,
                                scripted_opinion=Opinion.Agree))
    return out


def streams(seed: int, names: Iterable[str]) -> dict:
    """Independent named generators so that one stream's use never shifts another's."""
    names = list(names)
    children = np.random.SeedSequence(seed).spawn(len(names))
    return {n: np.random.Generator(np.random.PCG64(c)) for n, c in zip(names, children)}


@dataclass
class MetricSeries:
    """Scenario output: (time_ms, metric, value) rows plus summary, ledger and audit."""

    scenario: str
    rows: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    ledger: Any = None
    audit: list = field(default_factory=list)
    redress_log: list = field(default_factory=list)

    def add(self, time: int, metric: str, value: float) -> None:
        self.rows.append((int(time), metric, float(value)))

    def values(self, metric: str) -> np.ndarray:
        return np.array([v for _, m, v in self.rows if m == metric])

    def series(self, metric: str) -> tuple:
        pts = [(t, v) for t, m, v in self.rows if m == metric]
        if not pts:
            return np.array([], dtype=int), np.array([])
        t, v = zip(*pts)
        return np.array(t), np.array(v)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "metric", "value"])
        for t, m, v in self.rows:
            w.writerow([t, m, repr(v)])
        return buf.getvalue()

    def audit_json(self) -> str:
        return json.dumps({"summary": self.summary, "rounds": self.audit,
                           "redress": self.redress_log}, indent=1, sort_keys=True, default=str)

    def fingerprint(self) -> str:
        h = hashlib.sha256(self.to_csv().encode())
        if self.ledger is not None:
            h.update(self.ledger.head_hash)
        return h.hexdigest()
