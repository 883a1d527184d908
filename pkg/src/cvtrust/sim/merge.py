"""Highway on-ramp merge under a position-spoofing attack.

Layout along the x axis (metres): highway traffic enters at -600, ramp traffic
at -200 and must merge between -80 and the merge point at 0. The measured zone
is the 200 m of ramp plus the following 200 m of highway. Compromised vehicles
parked on a side street, out of sight of the road, take turns claiming to be a
stalled car on the highway just past the merge point.

Mobility is the intelligent driver model integrated at 200 ms, vectorised
with numpy. Vehicles brake for the phantom until they come close enough to
see the spot empty. Under the defended mode a vehicle that sees through the
claim files a disagreement; receivers turn cautious (they ignore the disputed
claim, halve acceleration and double their merge gaps) until the round
verdict is on the ledger.
"""
from __future__ import annotations

import math

import numpy as np

from ..trust import Opinion, Verdict
from .common import honest_votes, make_agents, make_chain, stance
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

HIGHWAY_ENTRY, RAMP_ENTRY = -600.0, -200.0
MERGE_ZONE, MERGE_POINT = -80.0, 0.0
ZONE_END, EXIT = 200.0, 400.0
RAMP_Y = -5.0
PHANTOM = (40.0, 0.0)
ATTACKER_SPOT = (-50.0, 120.0)

DT_MS = 200
CLAIM_PERIOD_MS = 1000
SAMPLE_MS = 10_000
SETTLE_MS = 60_000        # ramp vehicles entering this close to the end are not scored

LENGTH = 5.0
A_MAX, B_COMF, HEADWAY, S0 = 1.5, 2.0, 1.2, 2.0
LEAD_GAP_T, LAG_GAP_T = 0.5, 1.0
SPAWN_SPEED = {0: 20.0, 1: 15.0}


def _idm(v, v0, a, gap, dv):
    s_star = S0 + np.maximum(0.0, v * HEADWAY + v * dv / (2.0 * np.sqrt(a * B_COMF)))
    gap = np.maximum(gap, 0.1)
    return a * (1.0 - (v / v0) ** 4 - (s_star / gap) ** 2)


def _arrivals(rng, rate, end_ms):
    t, out = 0.0, []
    while True:
        t += rng.exponential(1.0 / rate)
        if t * 1000 >= end_ms:
            return out
        out.append(int(t * 1000))


class _Merge:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = streams(cfg.seed, ["arrivals", "population", "delays", "sensing"])
        attacked = cfg.mode is not Mode.NoAttack and cfg.attacker_count > 0
        self.attacked = attacked
        self.defended = cfg.mode is Mode.Defended
        ra = self.rng["arrivals"]
        hw = _arrivals(ra, cfg.arrival_rate, cfg.duration)
        rp = _arrivals(ra, cfg.arrival_rate, cfg.duration)
        self.schedule = sorted([(t, 0) for t in hw] + [(t, 1) for t in rp])
        n = len(self.schedule)
        self.desired = ra.uniform(23.0, 29.0, size=n)
        pop = self.rng["population"]
        self.agents = make_agents(n, pop, cfg)
        # attackers are always drawn so that every mode sees the same honest population
        self.attackers = make_agents(max(cfg.attacker_count, 0), pop, cfg,
                                     first_index=n + 1, honest=False)
        for a in self.attackers:
            a.position = ATTACKER_SPOT
        self.chain = make_chain(cfg, self.agents + self.attackers,
                                votes=honest_votes({a.id for a in self.attackers}))
        self.x = np.zeros(n)
        self.v = np.zeros(n)
        self.lane = np.zeros(n, dtype=int)
        self.alive = np.zeros(n, dtype=bool)
        self.entered = np.full(n, -1, dtype=np.int64)
        self.scored = np.zeros(n, dtype=bool)
        self.waiting: list = []
        self.series = MetricSeries(Scenario.HighwayMerge.value)
        self.q = EventQueue()
        self.current = -1
        self.condemned: set = set()
        self._reset_beliefs()

    # -- attack state -------------------------------------------------------
    def _reset_beliefs(self):
        n = len(self.agents)
        self.heard = np.zeros(n, dtype=bool)
        self.refuted = np.zeros(n, dtype=bool)
        self.cautious = np.zeros(n, dtype=bool)
        self.stanced = np.zeros(n, dtype=bool)
        self.disputed = np.zeros(n, dtype=bool)
        self.disagreed_at: list = []

    def _attack_live(self, now):
        return self.current >= 0 and now < self.episode_end

    def believers(self, now):
        if not self._attack_live(now):
            return np.zeros(len(self.agents), dtype=bool)
        b = self.alive & self.heard & ~self.refuted
        if self.defended:
            if self.attackers[self.current].id in self.condemned:
                return np.zeros_like(b)
            b &= ~self.cautious
        return b

    # -- mobility -----------------------------------------------------------
    def _spawn(self, now):
        still = []
        for i in self.waiting:
            lane = self.lane[i]
            x0 = HIGHWAY_ENTRY if lane == 0 else RAMP_ENTRY
            same = np.flatnonzero(self.alive & (self.lane == lane))
            speed = min(SPAWN_SPEED[lane], self.desired[i])
            if same.size:
                ahead = same[self.x[same] >= x0]
                if ahead.size:
                    j = ahead[np.argmin(self.x[ahead])]
                    gap = self.x[j] - x0 - LENGTH
                    if gap < S0 + LENGTH:
                        still.append(i)
                        continue
                    speed = min(speed, self.v[j] + 0.5 * max(gap - S0, 0.0) / HEADWAY)
            self.alive[i] = True
            self.x[i], self.v[i], self.entered[i] = x0, speed, now
            self.agents[i].position = (x0, 0.0 if lane == 0 else RAMP_Y)
        self.waiting = still

    def _tick(self, now):
        self._spawn(now)
        idx = np.flatnonzero(self.alive)
        if idx.size == 0:
            return
        x, v, lane = self.x[idx], self.v[idx], self.lane[idx]
        v0 = self.desired[idx]
        a = np.where(self.cautious[idx] & self.defended, A_MAX / 2, A_MAX)
        gap = np.full(idx.size, np.inf)
        dv = np.zeros(idx.size)
        for ln in (0, 1):
            sel = np.flatnonzero(lane == ln)
            if sel.size < 2:
                continue
            order = sel[np.argsort(x[sel], kind="stable")]
            gap[order[:-1]] = x[order[1:]] - x[order[:-1]] - LENGTH
            dv[order[:-1]] = v[order[:-1]] - v[order[1:]]
        acc = _idm(v, v0, a, gap, dv)
        on_ramp = lane == 1
        if on_ramp.any():
            stop = _idm(v, v0, a, MERGE_POINT - x, v)
            acc = np.where(on_ramp, np.minimum(acc, stop), acc)
        fooled = self.believers(now)[idx] & (x < PHANTOM[0])
        if fooled.any():
            ph = _idm(v, v0, a, PHANTOM[0] - x - LENGTH, v)
            acc = np.where(fooled, np.minimum(acc, ph), acc)
        acc = np.maximum(acc, -9.0)
        dt = DT_MS / 1000.0
        v_new = np.maximum(v + acc * dt, 0.0)
        self.x[idx] = x + 0.5 * (v + v_new) * dt
        self.v[idx] = v_new
        self._merge_decisions(idx)
        for i in idx:
            self.agents[i].position = (self.x[i], RAMP_Y if self.lane[i] == 1 else 0.0)
            self.agents[i].speed = self.v[i]
        done = idx[(self.lane[idx] == 0) & (self.x[idx] >= ZONE_END)]
        for i in done:
            if not self.scored[i] and self.schedule[i][1] == 1:
                self.scored[i] = True
                secs = (now - self.entered[i]) / 1000.0
                self.series.add(now, "zone_speed", (ZONE_END - RAMP_ENTRY) / secs)
                self.series.add(now, "zone_entry", self.entered[i])
        self.alive[idx[self.x[idx] >= EXIT]] = False

    def _merge_decisions(self, idx):
        ramp = idx[(self.lane[idx] == 1) & (self.x[idx] >= MERGE_ZONE)]
        if ramp.size == 0:
            return
        for i in ramp[np.argsort(-self.x[ramp])]:
            hw = np.flatnonzero(self.alive & (self.lane == 0))
            xi, vi = self.x[i], self.v[i]
            factor = 2.0 if (self.defended and self.cautious[i]) else 1.0
            ahead = hw[self.x[hw] >= xi]
            behind = hw[self.x[hw] < xi]
            if ahead.size:
                j = ahead[np.argmin(self.x[ahead])]
                if self.x[j] - xi - LENGTH < S0 + factor * LEAD_GAP_T * vi:
                    continue
            if behind.size:
                m = behind[np.argmax(self.x[behind])]
                if xi - self.x[m] - LENGTH < S0 + factor * LAG_GAP_T * self.v[m]:
                    continue
            self.lane[i] = 0

    # -- messages -----------------------------------------------------------
    def _claim(self, now):
        att = self.attackers[self.current]
        claim = Claim(att.id, PHANTOM, 0.0, now)
        live = [self.agents[i] for i in np.flatnonzero(self.alive)]
        for t, rcv, msg in broadcast(att, claim, now, live, self.rng["delays"], self.cfg.tb_s):
            self.q.schedule(t, EventKind.MessageDelivery, ("claim", rcv.id.index - 1, msg))

    def _on_claim(self, i, claim, now):
        if not self.alive[i] or claim.subject != self.attackers[self.current].id:
            return
        self.heard[i] = True
        agent = self.agents[i]
        att = self.attackers[self.current]
        op = physical_verify(agent, claim, (att.position, att.speed),
                             epsilon=self.cfg.epsilon, rng=self.rng["sensing"])
        if op is NO_OPINION:
            return
        if op is Opinion.Disagree:
            self.refuted[i] = True
        if not self.defended or self.stanced[i] or att.id in self.condemned:
            return
        if op is Opinion.Disagree or self.disputed[i]:
            self.stanced[i] = True
            self.cautious[i] = True
            agent.behavior_mode = Behavior.Cautious
            tx = stance(agent, att.id, op, claim.time, now)
            if op is Opinion.Disagree:
                self.disagreed_at.append(now)
            self.chain.submit(tx)
            live = [self.agents[j] for j in np.flatnonzero(self.alive)]
            for t, rcv, msg in broadcast(agent, tx, now, live, self.rng["delays"], self.cfg.tb_s):
                self.q.schedule(t, EventKind.MessageDelivery, ("tx", rcv.id.index - 1, msg))

    def _on_tx(self, i, tx, now):
        if tx.debate != self.attackers[self.current].id or tx.debate in self.condemned:
            return
        self.disputed[i] = True
        self.cautious[i] = True
        self.agents[i].behavior_mode = Behavior.Cautious

    def _round(self, now):
        self.chain.step(now)
        if not self.defended or self.current < 0:
            return
        att = self.attackers[self.current].id
        if self.chain.trust_points(att) == -1:
            if att not in self.condemned:
                self.condemned.add(att)
                self.series.add(now, "condemned", att.index)
            self._calm()
            return
        closed = self.chain.contracts.history(att)
        if closed and closed[-1].verdict is Verdict.DebateUpheld and not self.chain.contracts.open_contracts():
            self._calm()

    def _calm(self):
        self.cautious[:] = False
        for a in self.agents:
            a.behavior_mode = Behavior.Normal

    # -- driver -------------------------------------------------------------
    def run(self) -> MetricSeries:
        cfg, q = self.cfg, self.q
        for i, (t, lane) in enumerate(self.schedule):
            self.lane[i] = lane
            q.schedule(t, EventKind.VehicleArrival, i)
        for t in range(0, cfg.duration, DT_MS):
            q.schedule(t, EventKind.Tick)
        for t in range(cfg.t_lat, cfg.duration + 1, cfg.t_lat):
            q.schedule(t, EventKind.RoundBoundary)
        for t in range(SAMPLE_MS, cfg.duration + 1, SAMPLE_MS):
            q.schedule(t, EventKind.MetricSample)
        if self.attacked and cfg.attack_start < cfg.duration:
            span = (cfg.duration - cfg.attack_start) // cfg.attacker_count
            self.episode = max(span, 1)
            for k in range(cfg.attacker_count):
                q.schedule(cfg.attack_start + k * self.episode, EventKind.AttackTrigger, k)
        while len(q):
            ev = q.pop()
            now = ev.time
            if ev.kind is EventKind.Tick:
                self._tick(now)
            elif ev.kind is EventKind.VehicleArrival:
                self.waiting.append(ev.payload)
            elif ev.kind is EventKind.MessageBroadcast:
                if self._attack_live(now) and ev.payload == self.current:
                    self._claim(now)
                    if now + CLAIM_PERIOD_MS < self.episode_end:
                        q.schedule(now + CLAIM_PERIOD_MS, EventKind.MessageBroadcast, self.current)
            elif ev.kind is EventKind.MessageDelivery:
                what, i, msg = ev.payload
                if what == "claim":
                    self._on_claim(i, msg, now)
                else:
                    self._on_tx(i, msg, now)
            elif ev.kind is EventKind.RoundBoundary:
                self._round(now)
            elif ev.kind is EventKind.AttackTrigger:
                self.current = ev.payload
                self.episode_end = min(now + self.episode, cfg.duration)
                self._reset_beliefs()
                self._calm()
                self.series.add(now, "attack_episode", self.attackers[self.current].id.index)
                q.schedule(now, EventKind.MessageBroadcast, self.current)
            elif ev.kind is EventKind.MetricSample:
                live = np.flatnonzero(self.alive)
                self.series.add(now, "mean_speed", float(self.v[live].mean()) if live.size else 0.0)
                self.series.add(now, "cautious", float((self.cautious & self.alive).sum()))
                self.series.add(now, "fooled", float(self.believers(now).sum()))
        return self._finish()

    def _finish(self) -> MetricSeries:
        cfg, s = self.cfg, self.series
        t, speeds = s.series("zone_speed")
        _, entries = s.series("zone_entry")
        window = (entries >= cfg.attack_start) & (entries < cfg.duration - SETTLE_MS)
        scored = speeds[window]
        s.summary = {
            "scenario": Scenario.HighwayMerge.value, "mode": cfg.mode.value, "seed": cfg.seed,
            "mean_zone_speed": float(scored.mean()) if scored.size else math.nan,
            "scored_vehicles": int(scored.size),
            "attackers": [a.id.label for a in self.attackers] if self.attacked else [],
            "condemned": sorted(v.label for v in self.condemned),
        }
        s.ledger = self.chain.ledger
        s.audit = self.chain.audit
        s.redress_log = self.chain.redress_log
        return s


def run_highway_merge(cfg: ScenarioConfig) -> MetricSeries:
    if cfg.scenario is not Scenario.HighwayMerge:
        raise ValueError("configuration is not a merge scenario")
    return _Merge(cfg).run()
