"""Stake computation, stake-weighted sortition and quorum agreement.

Stake mixes accumulated proof-of-travel credits and trust points, each
normalised by one plus its population mean::

    stake = pot / (1 + mean_pot) + tp / (1 + mean_tp)

and is floored at zero. Committees are drawn by weighted sampling without
replacement from a pseudo-random stream keyed by a 32-byte seed; a block is
committed when verifiers holding strictly more than two thirds of the
committee stake vote for it.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Optional, Sequence

import numpy as np
from scipy.stats import binom

from .chain import Block, VehicleId, _i64, _u16, digest

logger = logging.getLogger(__name__)

DEFAULT_FAILURE_PROBABILITY = 5e-9
DEFAULT_PROPOSERS = 20
DEFAULT_STEPS = 11


class NoCommitteeError(RuntimeError):
    """Raised when no vehicle holds positive stake."""


class Infeasible(ValueError):
    """No finite committee satisfies the requested failure probability."""


@dataclass(frozen=True)
class StakeView:
    region: Optional[int]
    stakes: Mapping[VehicleId, float]
    mean_pot: float
    mean_tp: float

    @property
    def total(self) -> float:
        return float(sum(self.stakes.values()))

    def of(self, vehicles: Iterable[VehicleId]) -> float:
        return float(sum(self.stakes.get(v, 0.0) for v in vehicles))


def compute_stake(tp: Mapping[VehicleId, float], pot: Mapping[VehicleId, float],
                  region: Optional[int] = None) -> StakeView:
    if set(tp) != set(pot):
        raise ValueError("trust points and credits must cover the same vehicles")
    if not tp:
        return StakeView(region, {}, 0.0, 0.0)
    vehicles = sorted(tp)
    tps = np.array([tp[v] for v in vehicles], dtype=float)
    pots = np.array([pot[v] for v in vehicles], dtype=float)
    mean_tp, mean_pot = float(tps.mean()), float(pots.mean())
    # tp >= -1 keeps 1 + mean_tp >= 0; it only reaches 0 when every record is -1,
    # and then the term is identical for everyone, so the plain value is used.
    tp_den = 1.0 + mean_tp if 1.0 + mean_tp > 0 else 1.0
    raw = pots / (1.0 + mean_pot) + tps / tp_den
    stakes = {v: float(max(0.0, s)) for v, s in zip(vehicles, raw)}
    return StakeView(region, stakes, mean_pot, mean_tp)


# -- sortition ----------------------------------------------------------------

def round_seed(region: int, round_: int, prev_hash: bytes) -> bytes:
    return digest(b"seed" + _u16(region) + _i64(round_) + prev_hash)


@dataclass(frozen=True)
class Committee:
    round: int
    proposers: tuple[VehicleId, ...]
    verifiers: tuple[VehicleId, ...]
    seed: bytes
    weights: Mapping[VehicleId, float] = field(default_factory=dict)

    @property
    def leader(self) -> VehicleId:
        return self.proposers[0]

    @property
    def verifier_stake(self) -> float:
        return float(sum(self.weights[v] for v in self.verifiers))


def weighted_sample(weights: Sequence[float], k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` items drawn without replacement, in selection order.

    Exponential-key method: each positive-weight item gets key ``log(u)/w`` and
    the ``k`` largest keys, sorted descending, are distributed exactly like
    sequential weighted draws without replacement.
    """
    w = np.asarray(weights, dtype=float)
    u = rng.random(len(w))
    keys = np.full(len(w), -np.inf)
    pos = w > 0
    keys[pos] = np.log(u[pos]) / w[pos]
    k = min(k, int(pos.sum()))
    order = np.argsort(-keys, kind="stable")
    return order[:k]


def select_committee(view: StakeView, seed: bytes, n_proposers: int, n_verifiers: int,
                     round_: int = 0) -> Committee:
    vehicles = sorted(view.stakes)
    weights = [view.stakes[v] for v in vehicles]
    if not vehicles or sum(weights) <= 0:
        raise NoCommitteeError("all stakes are zero")
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(seed, "big")))
    proposers = tuple(vehicles[i] for i in weighted_sample(weights, n_proposers, rng))
    verifiers = tuple(vehicles[i] for i in weighted_sample(weights, n_verifiers, rng))
    return Committee(round_, proposers, verifiers, seed,
                     {v: view.stakes[v] for v in set(proposers) | set(verifiers)})


# -- agreement ----------------------------------------------------------------

@dataclass(frozen=True)
class RoundOutcome:
    committed: bool
    block: Optional[Block]
    yes_stake: float
    total_stake: float


def quorum_reached(yes: float, total: float) -> bool:
    return total > 0 and 3.0 * yes > 2.0 * total


def run_round(committee: Committee, candidate: Block,
              votes: Callable[[VehicleId, Block], bool] = lambda v, b: True) -> RoundOutcome:
    """Commit ``candidate`` iff verifiers with > 2/3 of the committee stake approve it."""
    total = committee.verifier_stake
    yes = float(sum(committee.weights[v] for v in committee.verifiers if votes(v, candidate)))
    if quorum_reached(yes, total):
        return RoundOutcome(True, candidate, yes, total)
    return RoundOutcome(False, None, yes, total)


def committee_size(h: float, failure: float = DEFAULT_FAILURE_PROBABILITY,
                   max_size: int = 1_000_000) -> int:
    """Smallest committee whose adversarial share reaches a third with probability < ``failure``.

    Members are honest independently with probability ``h``; the committee fails
    when at least ``ceil(size / 3)`` members are adversarial.
    """
    if not 0 < h <= 1:
        raise ValueError("honest fraction must lie in (0, 1]")
    if not 0 < failure < 1:
        raise ValueError("failure probability must lie in (0, 1)")
    if h <= 2 / 3:
        raise Infeasible(f"honest fraction {h} does not exceed 2/3")
    chunk = 4096
    for start in range(1, max_size + 1, chunk):
        sizes = np.arange(start, min(start + chunk, max_size + 1))
        k = -(-sizes // 3)
        tail = binom.sf(k - 1, sizes, 1.0 - h)
        hit = np.flatnonzero(tail < failure)
        if hit.size:
            return int(sizes[hit[0]])
    raise Infeasible(f"no committee up to {max_size} members reaches failure {failure}")


# -- adversarial safety harness ---------------------------------------------

STRATEGIES = ("withhold", "equivocate", "vote_against")


@dataclass(frozen=True)
class SafetyReport:
    committed: tuple[str, ...]
    honest_share: float
    adversarial_leader: bool

    @property
    def conflicting(self) -> bool:
        return len(self.committed) > 1

    @property
    def adversary_favoring(self) -> bool:
        return self.conflicting or "forged" in self.committed


def adversarial_round(view: StakeView, honest: set, strategy: str, seed: bytes,
                      n_proposers: int = DEFAULT_PROPOSERS, n_verifiers: int = 50) -> SafetyReport:
    """Play one round against an adversary controlling every vehicle not in ``honest``.

    An honest leader proposes one valid block. An adversarial leader
    equivocates, sending block ``a`` to one half of the honest verifiers and a
    conflicting block ``b`` to the other half, and also offers a ``forged``
    block no honest verifier accepts. Honest verifiers vote for at most one
    valid block per round; adversarial verifiers follow ``strategy``.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    committee = select_committee(view, seed, n_proposers, n_verifiers)
    rng = np.random.Generator(np.random.PCG64(int.from_bytes(digest(seed + b"split"), "big")))
    evil_leader = committee.leader not in honest
    candidates = ("a", "b", "forged") if evil_leader else ("a",)
    yes = dict.fromkeys(candidates, 0.0)
    for v in committee.verifiers:
        w = committee.weights[v]
        if v in honest:
            seen = "a" if not evil_leader or rng.random() < 0.5 else "b"
            yes[seen] += w
        elif strategy == "equivocate":
            for c in candidates:
                yes[c] += w
        elif strategy == "vote_against":
            # back the adversary's own block, never the honest one
            if evil_leader:
                yes["b"] += w
                yes["forged"] += w
    total = committee.verifier_stake
    committed = tuple(c for c in candidates if quorum_reached(yes[c], total))
    share = sum(committee.weights[v] for v in committee.verifiers if v in honest) / total
    return SafetyReport(committed, share, evil_leader)
