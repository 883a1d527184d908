"""Closed-form resource demand of the trust-points chain.

Rates inside this module are per hour and sizes are bytes. ``t_lat`` is kept
in seconds and converted where a formula counts blocks per day (minutes) or
transactions per block (hours).
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, fields, replace
from typing import Iterable, NamedTuple, Optional, Sequence

from .consensus import DEFAULT_FAILURE_PROBABILITY, Infeasible, committee_size

DAYS_PER_MONTH = 30
CPU_ANCHOR = 0.065
CPU_ANCHOR_HONEST = 0.8


@dataclass(frozen=True)
class ResourceParams:
    beta_l: float = 1.0         # lanes to outside per km of perimeter
    beta_c: float = 3000.0      # vehicles / hour / lane
    beta_v: float = 10.0        # vehicles per transfer transaction
    beta_d: float = 300.0       # vehicles / km^2
    beta_t: float = 0.05        # voting transactions / hour / vehicle
    S_t: float = 250.0          # bytes / transaction
    S_c: float = 200.0          # bytes / consensus message
    S_u: float = 25.0           # bytes / vehicle in a summary block
    d_0: float = 72.0           # region radius, km
    t_lat: float = 22.0         # round latency, s
    t_sum: float = 24.0         # summary period, h
    alpha_s: int = 1            # sharding divisor
    eta_p: int = 20
    eta_v: int = 334
    eta_s: int = 11
    L_0: float = 22.0           # s
    S_star: float = 4e6         # bytes
    F: float = DEFAULT_FAILURE_PROBABILITY

    def __post_init__(self):
        for f in fields(self):
            if not getattr(self, f.name) > 0:
                raise ValueError(f"{f.name} must be strictly positive")
        if int(self.alpha_s) != self.alpha_s or self.alpha_s < 1:
            raise ValueError("alpha_s must be an integer >= 1")

    def with_(self, **kw) -> "ResourceParams":
        return replace(self, **kw)


PRESETS = {"paper-2020": ResourceParams()}


def block_size_terms(p: ResourceParams) -> tuple[float, float]:
    """(border transfer bytes, interior voting bytes) in one block."""
    hours = p.t_lat / 3600.0
    border = 2 * math.pi * p.d_0 * p.beta_l * p.beta_c / p.beta_v * hours * p.S_t
    interior = math.pi * p.d_0 ** 2 * p.beta_d * p.beta_t * hours * p.S_t
    return border, interior


def block_size(p: ResourceParams) -> float:
    border, interior = block_size_terms(p)
    return border + interior


def data_rate(p: ResourceParams) -> float:
    """Bytes of transactions generated per second in the region."""
    return block_size(p) / p.t_lat


def min_latency(d_0: float, p: ResourceParams = ResourceParams(), max_iter: int = 200) -> float:
    """Smallest round latency the region sustains, or ``math.inf``.

    Latency is flat at ``L_0`` up to blocks of ``S_star`` bytes and grows in
    proportion beyond that, so ``t >= L_0 * max(1, S_b(t) / S_star)`` is iterated
    from ``t = L_0``. Above the knee the proportional model has no finite
    solution.
    """
    q = p.with_(d_0=d_0) if d_0 > 0 else None
    if q is None:
        return p.L_0
    t = p.L_0
    for _ in range(max_iter):
        nxt = p.L_0 * max(1.0, block_size(q.with_(t_lat=t)) / p.S_star)
        if nxt <= t * (1 + 1e-12):
            return t
        t = nxt
    return math.inf


def knee_radius(p: ResourceParams = ResourceParams()) -> float:
    """Radius (km) where a block produced in ``L_0`` seconds is exactly ``S_star``."""
    per_tx = p.L_0 / 3600.0 * p.S_t
    a = math.pi * p.beta_d * p.beta_t * per_tx
    b = 2 * math.pi * p.beta_l * p.beta_c / p.beta_v * per_tx
    return (-b + math.sqrt(b * b + 4 * a * p.S_star)) / (2 * a)


def communication_cost(p: ResourceParams) -> float:
    """Bytes received by a vehicle in one round."""
    if p.eta_s < 2:
        raise ValueError("eta_s must be at least 2")
    return block_size(p) + p.S_c * p.eta_p + p.S_c * p.eta_v * (p.eta_s - 2)


def communication_per_minute(p: ResourceParams) -> float:
    return communication_cost(p) * 60.0 / p.t_lat


class StorageCost(NamedTuple):
    per_day: float
    per_month: float
    with_summary: float
    overhead_fraction: float
    summary_size: float


def blocks_per_day(p: ResourceParams) -> float:
    return 24 * 60 / (p.t_lat / 60.0)


def storage_cost(p: ResourceParams) -> StorageCost:
    """Daily and monthly storage, storage with a summary block, and its overhead.

    ``with_summary`` ignores sharding; ``overhead_fraction`` compares one
    summary block to the data generated over one summary period.
    """
    unsharded_day = blocks_per_day(p) * block_size(p)
    per_day = unsharded_day / p.alpha_s
    summary = math.pi * p.d_0 ** 2 * p.beta_d * p.S_u
    with_summary = summary + (p.t_sum / 24.0) * unsharded_day
    hourly = unsharded_day / 24.0
    return StorageCost(per_day, per_day * DAYS_PER_MONTH, with_summary,
                       summary / (p.t_sum * hourly), summary)


class PotSizing(NamedTuple):
    population: float
    tx_size: float
    aggregate_size: float


def pot_sizing(d_0: float, p: ResourceParams = ResourceParams(), bytes_per_record: int = 20,
               records_per_tx: int = 500) -> PotSizing:
    population = math.pi * d_0 ** 2 * p.beta_d
    tx = bytes_per_record * records_per_tx
    return PotSizing(population, tx, population * tx)


def cpu_model(h: float, failure: float = DEFAULT_FAILURE_PROBABILITY) -> float:
    """Core utilisation, proportional to the verifier committee size.

    Anchored at 6.5% of a core for an 80% honest population.
    """
    if not 2 / 3 < h <= 1:
        raise Infeasible(f"honest fraction {h} does not exceed 2/3")
    return CPU_ANCHOR * committee_size(h, failure) / committee_size(CPU_ANCHOR_HONEST, failure)


# -- sweep tables -------------------------------------------------------------

INFEASIBLE = "infeasible"


def _fmt(x) -> str:
    if isinstance(x, str):
        return x
    if x is None or (isinstance(x, float) and math.isinf(x)):
        return INFEASIBLE
    return repr(float(x)) if isinstance(x, float) else str(x)


def _csv(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


def latency_table(radii: Iterable[float], p: ResourceParams = ResourceParams()) -> str:
    rows = []
    for d in radii:
        q = p.with_(d_0=d, t_lat=p.L_0)
        rows.append((d, block_size(q), data_rate(q) * 60, min_latency(d, p)))
    return _csv(["d_0_km", "block_size_bytes", "data_rate_bytes_per_min", "min_latency_s"], rows)


def _cpu_or_marker(h: float, failure: float):
    try:
        return cpu_model(h, failure)
    except Infeasible:
        return INFEASIBLE


def cpu_table(honest: Iterable[float], p: ResourceParams = ResourceParams()) -> str:
    return _csv(["h", "cpu_fraction"], [(h, _cpu_or_marker(h, p.F)) for h in honest])


def communication_table(honest: Iterable[float], latencies: Iterable[float],
                        radii: Iterable[float], p: ResourceParams = ResourceParams()) -> str:
    rows = []
    latencies, radii = list(latencies), list(radii)
    for h in honest:
        try:
            eta_v = committee_size(h, p.F)
        except Infeasible:
            eta_v = None
        for t in latencies:
            for d in radii:
                if eta_v is None:
                    rows.append((h, t, d, INFEASIBLE, INFEASIBLE))
                    continue
                q = p.with_(eta_v=eta_v, t_lat=t, d_0=d)
                rows.append((h, t, d, communication_cost(q), communication_per_minute(q)))
    return _csv(["h", "t_lat_s", "d_0_km", "bytes_per_round", "bytes_per_min"], rows)


def storage_table(radii: Iterable[float], p: ResourceParams = ResourceParams()) -> str:
    rows = []
    for d in radii:
        s = storage_cost(p.with_(d_0=d))
        rows.append((d, s.per_day, s.per_month, s.summary_size, s.with_summary, s.overhead_fraction))
    return _csv(["d_0_km", "per_day_bytes", "per_month_bytes", "summary_bytes",
                 "with_summary_bytes", "overhead_fraction"], rows)
