"""Four-approach intersection under a bad-mouthing attack.

Each approach is a 200 m straight lane into the box at the origin, followed by
100 m of exit lane on the far side; all movements go straight. Passage through
the box is a single first-come first-served server: under reservation service
vehicles glide in at slots ``RESERVATION_HEADWAY`` apart, under all-way stop
each one stops at the line and the box clears every ``STOP_HEADWAY``.

From ``attack_start`` on (retrying each second while the approaches are
empty) a compromised vehicle parked at a corner files disagreements against
every vehicle within its examination range. Vehicles that receive one
distrust the reservation exchange and the whole intersection falls back to
all-way stop. Witnesses that can examine a victim back it with agree
stances. Reservation service resumes at the first round boundary at which
every contract raised by the attack has been decided.
"""
from __future__ import annotations

import numpy as np

from ..trust import ContractStatus, Opinion
from .common import make_agents, make_chain, stance
from .config import Mode, Scenario, ScenarioConfig
from .world import (
    NO_OPINION,
    Behavior,
    Claim,
    EventKind,
    EventQueue,
    MetricSeries,
    broadcast,
    physical_verify,
    streams,
)

APPROACH, EXIT_LEN, BOX = 200.0, 100.0, 20.0
RESERVATION_HEADWAY = 2.0     # s
STOP_HEADWAY = 4.0            # s
DECEL, ACCEL, STOP_DWELL = 2.0, 2.0, 1.0
ATTACKER_SPOT = (15.0, 15.0)
DIRECTIONS = np.array([(0.0, -1.0), (1.0, 0.0), (0.0, 1.0), (-1.0, 0.0)])   # entry side unit vectors

RESERVATION, ALL_WAY_STOP = "reservation", "all_way_stop"


def free_travel_time(speed: float) -> float:
    return (APPROACH + BOX + EXIT_LEN) / speed


class _Intersection:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = streams(cfg.seed, ["arrivals", "population", "delays", "sensing"])
        ra = self.rng["arrivals"]
        rows = []
        for side in range(4):
            t = 0.0
            while True:
                t += ra.exponential(1.0 / cfg.arrival_rate)
                if t * 1000 >= cfg.duration:
                    break
                rows.append((int(t * 1000), side))
        rows.sort()
        self.entry = np.array([r[0] for r in rows], dtype=np.int64)
        self.side = np.array([r[1] for r in rows], dtype=int)
        n = len(rows)
        self.speed = ra.uniform(12.0, 15.0, size=n)
        pop = self.rng["population"]
        self.agents = make_agents(n, pop, cfg)
        self.attacker = make_agents(1, pop, cfg, first_index=n + 1, honest=False)[0]
        self.attacker.position = ATTACKER_SPOT
        self.attacked = cfg.mode is not Mode.NoAttack and cfg.attacker_count > 0
        self.chain = make_chain(cfg, self.agents + [self.attacker])
        self.line_time = np.full(n, np.nan)    # s, arrival at the stop line
        self.depart = np.full(n, np.nan)       # s, entering the box
        self.exit_time = np.full(n, np.nan)
        self.mode = RESERVATION
        self.mode_log = [(0, RESERVATION)]
        self.box_free = 0.0
        self.last_line = np.zeros(4)
        self.victims: list = []
        self.attack_time = None
        self.witnessed: set = set()
        self.series = MetricSeries(Scenario.Intersection.value)
        self.q = EventQueue()

    def position(self, i: int, now_ms: int) -> tuple:
        """Where vehicle ``i`` is at ``now_ms``; None before entry or after exit."""
        t = now_ms / 1000.0
        t0 = self.entry[i] / 1000.0
        if t < t0 or (not np.isnan(self.exit_time[i]) and t > self.exit_time[i]):
            return None
        d = DIRECTIONS[self.side[i]]
        if np.isnan(self.depart[i]) or t < self.depart[i]:
            dist = max(APPROACH - self.speed[i] * (t - t0), 0.0)
            return (float(d[0] * (dist + BOX / 2)), float(d[1] * (dist + BOX / 2)))
        past = self.speed[i] * (t - self.depart[i]) - BOX / 2
        return (float(-d[0] * past), float(-d[1] * past))

    def _present(self, now):
        out = []
        for i in np.flatnonzero(self.entry <= now):
            p = self.position(int(i), now)
            if p is not None:
                self.agents[i].position = p
                out.append(int(i))
        return out

    # -- service ------------------------------------------------------------
    def _reach_line(self, i, now):
        v = self.speed[i]
        t = max(now / 1000.0, self.last_line[self.side[i]] + 1.0)
        self.last_line[self.side[i]] = t
        self.line_time[i] = t
        if self.mode == RESERVATION:
            slot = max(t, self.box_free)
            self.box_free = slot + RESERVATION_HEADWAY
            self.depart[i] = slot
            cross = (BOX + EXIT_LEN) / v
        else:
            ready = t + v / (2 * DECEL) + STOP_DWELL
            slot = max(ready, self.box_free)
            self.box_free = slot + STOP_HEADWAY
            self.depart[i] = slot
            cross = v / (2 * ACCEL) + (BOX + EXIT_LEN) / v
        self.exit_time[i] = self.depart[i] + cross
        tt = self.exit_time[i] - self.entry[i] / 1000.0
        self.series.add(int(round(self.exit_time[i] * 1000)), "travel_time", tt)
        self.series.add(int(round(self.exit_time[i] * 1000)), "entry_time", self.entry[i] / 1000.0)

    def _set_mode(self, mode, now):
        if mode != self.mode:
            self.mode = mode
            self.mode_log.append((now, mode))
            self.series.add(now, "mode_all_way_stop", 1.0 if mode == ALL_WAY_STOP else 0.0)

    # -- attack -------------------------------------------------------------
    def _attack(self, now):
        present = self._present(now)
        dist = {i: float(np.hypot(*np.subtract(self.agents[i].position, ATTACKER_SPOT)))
                for i in present}
        # it accuses what it could plausibly have examined, else the nearest vehicle it hears
        seen = [i for i in present if dist[i] <= self.attacker.exam_range]
        if not seen:
            audible = [i for i in present if dist[i] <= self.attacker.comm_range]
            seen = [min(audible, key=dist.get)] if audible else []
        if not seen:
            # nobody to accuse yet: try again a second later
            if now + 1000 < self.cfg.duration:
                self.q.schedule(now + 1000, EventKind.AttackTrigger)
            return
        self.attack_time = now
        self.victims = seen
        live = [self.agents[i] for i in present]
        for i in seen:
            tx = stance(self.attacker, self.agents[i].id, Opinion.Disagree, now, now)
            self.chain.submit(tx)
            for t, rcv, msg in broadcast(self.attacker, tx, now, live, self.rng["delays"], self.cfg.tb_s):
                self.q.schedule(t, EventKind.MessageDelivery, (rcv.id.index - 1, msg))
        self.series.add(now, "victims", len(seen))

    def _on_tx(self, i, tx, now):
        agent = self.agents[i]
        agent.behavior_mode = Behavior.Cautious
        self._set_mode(ALL_WAY_STOP, now)
        victim = tx.debate.index - 1
        if victim == i or (i, victim) in self.witnessed or not agent.honest:
            return
        vpos = self.position(victim, now)
        if vpos is None or self.position(i, now) is None:
            return
        agent.position = self.position(i, now)
        claim = Claim(tx.debate, vpos, float(self.speed[victim]), now)
        op = physical_verify(agent, claim, (vpos, float(self.speed[victim])),
                             epsilon=self.cfg.epsilon, rng=self.rng["sensing"])
        if op is NO_OPINION:
            return
        self.witnessed.add((i, victim))
        self.chain.submit(stance(agent, tx.debate, op, tx.payload["message_time"], now))

    def _round(self, now):
        self.chain.step(now)
        if self.mode != ALL_WAY_STOP:
            return
        table = self.chain.contracts
        raised = [c for c in table.contracts if c.opened_at >= self.attack_time]
        if raised and all(c.status is not ContractStatus.Open for c in raised):
            self._set_mode(RESERVATION, now)
            for a in self.agents:
                a.behavior_mode = Behavior.Normal
            self.series.add(now, "restored", (now - self.attack_time) / 1000.0)

    def run(self) -> MetricSeries:
        cfg, q = self.cfg, self.q
        for i in range(len(self.entry)):
            line = int(self.entry[i] + 1000 * APPROACH / self.speed[i])
            q.schedule(int(self.entry[i]), EventKind.VehicleArrival, ("enter", i))
            q.schedule(line, EventKind.VehicleArrival, ("line", i))
        for t in range(cfg.t_lat, cfg.duration + 1, cfg.t_lat):
            q.schedule(t, EventKind.RoundBoundary)
        if self.attacked and cfg.attack_start < cfg.duration:
            q.schedule(cfg.attack_start, EventKind.AttackTrigger)
        while len(q):
            ev = q.pop()
            now = ev.time
            if ev.kind is EventKind.VehicleArrival:
                what, i = ev.payload
                if what == "line":
                    self._reach_line(i, now)
            elif ev.kind is EventKind.AttackTrigger:
                self._attack(now)
            elif ev.kind is EventKind.MessageDelivery:
                self._on_tx(*ev.payload, now)
            elif ev.kind is EventKind.RoundBoundary:
                self._round(now)
        return self._finish()

    def _finish(self) -> MetricSeries:
        cfg, s = self.cfg, self.series
        restored = [v for _, m, v in s.rows if m == "restored"]
        stop_start = next((t for t, m in self.mode_log if m == ALL_WAY_STOP), None)
        verdicts = [{"debate": c.debate.label, "verdict": c.verdict.value if c.verdict else None}
                    for c in self.chain.contracts.contracts]
        s.summary = {
            "scenario": Scenario.Intersection.value, "mode": cfg.mode.value, "seed": cfg.seed,
            "t_lat_s": cfg.t_lat / 1000.0,
            "attack_start_s": self.attack_time / 1000.0 if self.attack_time is not None else None,
            "fallback_start_s": stop_start / 1000.0 if stop_start is not None else None,
            "recovery_s": restored[0] if restored else None,
            "victims": len(self.victims),
            "attacker": self.attacker.id.label,
            "attacker_tp": self.chain.trust_points(self.attacker.id),
            "contracts": verdicts,
            "mean_travel_time": float(np.nanmean(self.exit_time - self.entry / 1000.0)),
            "mode_log": [(t, m) for t, m in self.mode_log],
        }
        s.ledger, s.audit, s.redress_log = self.chain.ledger, self.chain.audit, self.chain.redress_log
        return s


def run_intersection(cfg: ScenarioConfig) -> MetricSeries:
    if cfg.scenario is not Scenario.Intersection:
        raise ValueError("configuration is not an intersection scenario")
    return _Intersection(cfg).run()


def travel_time_profile(series: MetricSeries, window: int = 5) -> tuple:
    """Entry times (s) and the moving average of travel time over ``window`` vehicles."""
    _, tt = series.series("travel_time")
    _, entry = series.series("entry_time")
    order = np.argsort(entry, kind="stable")
    entry, tt = entry[order], tt[order]
    if tt.size < window:
        return entry, tt
    kernel = np.ones(window) / window
    return entry[window - 1:], np.convolve(tt, kernel, mode="valid")


def travel_time_inflation(attacked: MetricSeries, control: MetricSeries, window: int = 5) -> np.ndarray:
    """Moving average of per-vehicle extra travel time against a same-seed control run.

    Both runs must share arrivals (same seed), so vehicles pair up by entry time.
    """
    def by_entry(s):
        _, tt = s.series("travel_time")
        _, entry = s.series("entry_time")
        order = np.argsort(entry, kind="stable")
        return entry[order], tt[order]

    ea, ta = by_entry(attacked)
    ec, tc = by_entry(control)
    if not np.array_equal(ea, ec):
        raise ValueError("runs do not share arrivals")
    extra = ta - tc
    if extra.size < window:
        return extra
    return np.convolve(extra, np.ones(window) / window, mode="valid")
