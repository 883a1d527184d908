"""Two parallel routes and a Sybil-backed fake accident report.

Both routes are 1500 m at 20 m/s and end in a bottleneck that releases one
vehicle every ``BOTTLENECK_HEADWAY`` seconds. At ``attack_start`` a Sybil
identity reports an accident half way along route 0; the attacker, which
holds a large stock of proof-of-travel credits, and the other Sybils back
the report, so the first vote goes their way.

While the report stands, arriving vehicles avoid route 0 with probability
``reroute_probability`` and otherwise pick a route at random. Vehicles that
still drive past the site see the road clear and file redress requests; the
chain re-evaluates the upheld verdict every round until the stake margin of
the requesters exceeds ``n_th``.
"""
from __future__ import annotations

import numpy as np

from ..trust import ContractStatus, Opinion, Verdict
from .common import make_agents, make_chain, redress_request, stance
from .config import Mode, Scenario, ScenarioConfig
from .world import (
    NO_OPINION,
    Claim,
    EventKind,
    EventQueue,
    MetricSeries,
    inject_sybil,
    physical_verify,
    streams,
)

ROUTE_LENGTH = 1500.0
SPEED = 20.0
SITE = 750.0
BOTTLENECK_HEADWAY = 4.0       # s
ROUTE_Y = (0.0, 600.0)
PARKED = (SITE, 30.0)          # where the accident "reporters" really are


def _at(route: int, x: float) -> tuple:
    return (float(x), ROUTE_Y[route])


class _Routes:
    def __init__(self, cfg: ScenarioConfig):
        self.cfg = cfg
        self.rng = streams(cfg.seed, ["arrivals", "choice", "population", "delays", "sensing"])
        ra = self.rng["arrivals"]
        times, t = [], 0.0
        while True:
            t += ra.exponential(1.0 / cfg.arrival_rate)
            if t * 1000 >= cfg.duration:
                break
            times.append(int(t * 1000))
        self.entry = np.array(times, dtype=np.int64)
        n = len(times)
        self.u_reroute = self.rng["choice"].random(n)
        self.u_route = self.rng["choice"].random(n)
        pop = self.rng["population"]
        self.agents = make_agents(n, pop, cfg)
        mean_credits = float(np.mean([a.pot for a in self.agents])) if n else 0.0
        self.attacker = make_agents(1, pop, cfg, first_index=n + 1, honest=False)[0]
        self.attacker.pot = cfg.attacker_credit_multiple * mean_credits
        self.attacker.position = PARKED
        self.sybils = inject_sybil(self.attacker, cfg.sybil_count, pop, first_index=n + 2)
        self.reporter = self.sybils[0]
        self.attacked = cfg.mode is not Mode.NoAttack
        self.chain = make_chain(cfg, self.agents + [self.attacker] + self.sybils)
        self.route = np.full(n, -1, dtype=int)
        self.exit_time = np.full(n, np.nan)
        self.last_release = [0.0, 0.0]
        self.filed: set = set()
        self.redressed_at = None
        self.series = MetricSeries(Scenario.RouteChoice.value)
        self.q = EventQueue()

    # -- beliefs ------------------------------------------------------------
    def report_standing(self) -> bool:
        """An upheld, unredressed verdict backs the accident report."""
        return any(c.status is ContractStatus.Closed and c.verdict is Verdict.DebateUpheld
                   for c in self.chain.contracts.history(self.reporter.id))

    def _choose(self, i) -> int:
        if self.report_standing() and self.u_reroute[i] < self.cfg.reroute_probability:
            return 1
        return 0 if self.u_route[i] < 0.5 else 1

    # -- events -------------------------------------------------------------
    def _enter(self, i, now):
        r = self._choose(i)
        self.route[i] = r
        self.series.add(now, "route", r)
        if r == 0:
            self.q.schedule(now + int(1000 * SITE / SPEED), EventKind.MessageDelivery, ("site", i))
        self.q.schedule(now + int(1000 * ROUTE_LENGTH / SPEED), EventKind.VehicleArrival, ("bottleneck", i))

    def _bottleneck(self, i, now):
        r = self.route[i]
        out = max(now / 1000.0, self.last_release[r] + BOTTLENECK_HEADWAY)
        self.last_release[r] = out
        self.exit_time[i] = out
        tt = out - self.entry[i] / 1000.0
        self.series.add(int(round(out * 1000)), "travel_time", tt)
        self.series.add(int(round(out * 1000)), "entry_time", self.entry[i] / 1000.0)

    def _attack(self, now):
        for backer in [self.attacker] + self.sybils[1:]:
            self.chain.submit(stance(backer, self.reporter.id, Opinion.Agree, now, now))
        self.series.add(now, "accident_report", self.reporter.id.index)

    def _pass_site(self, i, now):
        """Vehicle ``i`` drives past the reported accident and checks it."""
        if not self.attacked or now < self.cfg.attack_start or self.redressed_at is not None:
            return
        if i in self.filed:
            return
        agent = self.agents[i]
        agent.position = _at(0, SITE)
        claim = Claim(self.reporter.id, _at(0, SITE), 0.0, now)
        op = physical_verify(agent, claim, (PARKED, 0.0), epsilon=self.cfg.epsilon,
                             rng=self.rng["sensing"])
        if op is NO_OPINION:
            return
        self.filed.add(i)
        window = 2 * self.cfg.tb_s
        if now - self.cfg.attack_start <= window:
            # the report is fresh: take a stand in the running vote
            self.chain.submit(stance(agent, self.reporter.id, op, self.cfg.attack_start, now))
            self.series.add(now, "stance", i + 1)
        elif op is Opinion.Disagree:
            self.chain.submit(redress_request(agent, self.reporter.id, now))
            self.series.add(now, "redress_request", i + 1)

    def _round(self, now):
        self.chain.step(now)
        if self.redressed_at is None:
            for e in self.chain.redress_log:
                if e["fired"]:
                    self.redressed_at = e["time"]
                    self.series.add(now, "redressed", (now - self.cfg.attack_start) / 1000.0)
                    break

    def run(self) -> MetricSeries:
        cfg, q = self.cfg, self.q
        for i, t in enumerate(self.entry):
            q.schedule(int(t), EventKind.VehicleArrival, ("enter", i))
        for t in range(cfg.t_lat, cfg.duration + 1, cfg.t_lat):
            q.schedule(t, EventKind.RoundBoundary)
        if self.attacked and cfg.attack_start < cfg.duration:
            q.schedule(cfg.attack_start, EventKind.AttackTrigger)
        while len(q):
            ev = q.pop()
            now = ev.time
            if ev.kind is EventKind.VehicleArrival:
                what, i = ev.payload
                if what == "enter":
                    self._enter(i, now)
                else:
                    self._bottleneck(i, now)
            elif ev.kind is EventKind.MessageDelivery:
                self._pass_site(ev.payload[1], now)
            elif ev.kind is EventKind.AttackTrigger:
                self._attack(now)
            elif ev.kind is EventKind.RoundBoundary:
                self._round(now)
        return self._finish()

    def _finish(self) -> MetricSeries:
        cfg, s = self.cfg, self.series
        first = next((c for c in self.chain.contracts.contracts if c.debate == self.reporter.id), None)
        done = ~np.isnan(self.exit_time)
        s.summary = {
            "scenario": Scenario.RouteChoice.value, "mode": cfg.mode.value, "seed": cfg.seed,
            "arrival_rate": cfg.arrival_rate,
            "attacker": self.attacker.id.label,
            "sybils": [v.id.label for v in self.sybils],
            "reporter": self.reporter.id.label,
            "first_verdict": first.verdict.value if first is not None and first.verdict else None,
            "redress_time_s": self.redressed_at / 1000.0 if self.redressed_at is not None else None,
            "time_to_redress_s": ((self.redressed_at - cfg.attack_start) / 1000.0
                                  if self.redressed_at is not None else None),
            "redress_requests": len([1 for _, m, _ in s.rows if m == "redress_request"]),
            "mean_travel_time": float(np.mean(self.exit_time[done] - self.entry[done] / 1000.0)),
        }
        s.ledger, s.audit, s.redress_log = self.chain.ledger, self.chain.audit, self.chain.redress_log
        return s


def run_route_choice(cfg: ScenarioConfig) -> MetricSeries:
    if cfg.scenario is not Scenario.RouteChoice:
        raise ValueError("configuration is not a route-choice scenario")
    if cfg.sybil_count < 2:
        raise ValueError("route choice needs at least two Sybil identities")
    return _Routes(cfg).run()
