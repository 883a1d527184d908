"""Helpers the scenarios share: populations, stances and the regional chain."""
from __future__ import annotations

import numpy as np

from ..chain import KeyPair, Scid, VehicleId, make_transaction
from ..trust import Opinion, RegionChain, TrustParams
from .config import ScenarioConfig
from .world import VehicleAgent

REGION = 0
MEAN_CREDITS = 100.0
CREDIT_SPREAD = 0.3   # lognormal sigma of accumulated credits


def make_agents(n: int, rng: np.random.Generator, cfg: ScenarioConfig, first_index: int = 1,
                honest: bool = True) -> list:
    credits = rng.lognormal(np.log(MEAN_CREDITS), CREDIT_SPREAD, size=n)
    out = []
    for k in range(n):
        kp = KeyPair(rng.bytes(32))
        vid = VehicleId(REGION, first_index + k, kp.public_key)
        out.append(VehicleAgent(vid, kp, comm_range=cfg.comm_range, exam_range=cfg.exam_range,
                                honest=honest, pot=float(credits[k])))
    return out


def make_chain(cfg: ScenarioConfig, agents, votes=None) -> RegionChain:
    """Regional chain with every agent registered in the genesis block."""
    chain = RegionChain(REGION, TrustParams(tb_s=cfg.tb_s, match_radius=2 * cfg.comm_range,
                                            n_th=cfg.n_th),
                        n_verifiers=50, votes=votes)
    for a in agents:
        chain.register(a.id, a.pot)
    chain.genesis(0)
    return chain


def stance(agent: VehicleAgent, debate: VehicleId, opinion: Opinion, message_time: int, now: int):
    return make_transaction(agent.keypair, agent.id, Scid.Disagreement, debate=debate,
                            location=agent.position, time=now,
                            payload={"opinion": opinion.value, "message_time": int(message_time)})


def redress_request(agent: VehicleAgent, debate: VehicleId, now: int):
    return make_transaction(agent.keypair, agent.id, Scid.RedressRequest, debate=debate,
                            location=agent.position, time=now, payload={})


def honest_votes(dishonest: set):
    return lambda v, block: v not in dishonest
