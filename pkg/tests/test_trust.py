import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvtrust.chain import Block, Ledger, Region, RegionRegistry, Scid, StateUpdate, append_block, make_transaction
from cvtrust.trust import (
    ContractStatus,
    ContractTable,
    RegionChain,
    TransferRejected,
    TrustParams,
    Verdict,
    VotingContract,
    build_round_block,
    close_contract,
    handle_disagreement,
    handle_redress,
    handle_transfer,
)
from conftest import vehicle

PARAMS = TrustParams(tb_s=1000)
DEBATE, DEBATE_KEY = vehicle(1, 3)


def stance(who, opinion, t=100, msg_time=None, loc=(0.0, 0.0), debate=DEBATE):
    vid, kp = who
    return make_transaction(kp, vid, Scid.Disagreement, debate=debate, location=loc, time=t,
                            payload={"opinion": opinion, "message_time": t if msg_time is None else msg_time})


def redress(who, t=5000, debate=DEBATE):
    vid, kp = who
    return make_transaction(kp, vid, Scid.RedressRequest, debate=debate, location=(0, 0), time=t)


def as_dict(updates):
    return {(u.vehicle, u.op): u.value for u in updates}


# -- instant voting -----------------------------------------------------------

def test_first_disagreement_opens_contract(fleet):
    table = handle_disagreement(stance(fleet[0], "disagree"), 200, ContractTable(), PARAMS)
    (c,) = table.contracts
    assert c.debate == DEBATE and c.disagree == {fleet[0][0]} and c.agree == set()


def test_second_stance_joins_agree_group(fleet):
    table = ContractTable()
    handle_disagreement(stance(fleet[0], "disagree"), 200, table, PARAMS)
    handle_disagreement(stance(fleet[1], "agree", t=150), 200, table, PARAMS)
    (c,) = table.contracts
    assert c.agree == {fleet[1][0]} and c.disagree == {fleet[0][0]}


def test_first_stance_rule(fleet):
    table = ContractTable()
    handle_disagreement(stance(fleet[0], "agree", t=100), 300, table, PARAMS)
    handle_disagreement(stance(fleet[0], "disagree", t=200), 300, table, PARAMS)
    (c,) = table.contracts
    assert c.agree == {fleet[0][0]} and c.disagree == set()
    assert table.audit[-1]["event"] == "duplicate"


def test_far_location_opens_second_contract(fleet):
    table = ContractTable()
    handle_disagreement(stance(fleet[0], "disagree"), 200, table, PARAMS)
    handle_disagreement(stance(fleet[1], "disagree", loc=(5000.0, 0.0)), 200, table, PARAMS)
    assert len(table.contracts) == 2


def test_stale_stance_logged_and_ignored(fleet):
    table = handle_disagreement(stance(fleet[0], "disagree", t=5000, msg_time=1000), 6000,
                                ContractTable(), PARAMS)
    assert table.contracts == [] and table.audit[-1]["event"] == "stale"


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 9), st.integers(0, 6000), st.integers(0, 6000),
                          st.booleans()), max_size=15))
def test_stale_stances_never_enter_groups(entries):
    people = [vehicle(0, i) for i in range(1, 11)]
    table = ContractTable()
    fresh = set()
    for who, t, msg, agree in entries:
        tx = stance(people[who], "agree" if agree else "disagree", t=t, msg_time=msg)
        handle_disagreement(tx, 10_000, table, PARAMS)
        if 0 <= t - msg <= 2 * PARAMS.tb_s:
            fresh.add(people[who][0])
    members = set().union(*(c.participants for c in table.contracts)) if table.contracts else set()
    assert members <= fresh


# -- closing --------------------------------------------------------------------

def _contract(agree, disagree, opened=0):
    return VotingContract(DEBATE, opened, (0.0, 0.0), set(agree), set(disagree))


def test_close_hand_trace_agree_wins(fleet):
    a1, a2, d1 = fleet[0][0], fleet[1][0], fleet[2][0]
    stakes = {a1: 2.0, a2: 1.5, d1: 3.0}
    verdict, ups = close_contract(_contract({a1, a2}, {d1}), stakes, 2000, PARAMS)
    assert verdict is Verdict.DebateUpheld
    got = as_dict(ups)
    assert got[(a1, "add")] == 1 and got[(a2, "add")] == 1
    assert got[(d1, "set")] == -1
    # the debated vehicle has no stake here and is rewarded alongside its backers
    assert got[(DEBATE, "add")] == 1
    assert len(ups) == 4


def test_close_unanimous(fleet):
    a1, a2 = fleet[0][0], fleet[1][0]
    verdict, ups = close_contract(_contract({a1, a2}, set()), {}, 2000, PARAMS)
    assert verdict is Verdict.DebateUpheld
    assert all(u.op == "add" and u.value == 1 for u in ups)
    assert {u.vehicle for u in ups} == {a1, a2, DEBATE}


def test_close_tie_changes_nothing(fleet):
    a1, d1 = fleet[0][0], fleet[1][0]
    verdict, ups = close_contract(_contract({a1}, {d1}), {a1: 2.0, d1: 2.0}, 2000, PARAMS)
    assert verdict is Verdict.Tie and ups == []


def test_close_condemned_sanctions_debated_vehicle(fleet):
    a1, d1, d2 = fleet[0][0], fleet[1][0], fleet[2][0]
    verdict, ups = close_contract(_contract({a1}, {d1, d2}), {a1: 1.0, d1: 1.0, d2: 1.0}, 2000, PARAMS)
    assert verdict is Verdict.DebateCondemned
    got = as_dict(ups)
    assert got[(DEBATE, "set")] == -1 and got[(a1, "set")] == -1
    assert got[(d1, "add")] == 1 and got[(d2, "add")] == 1


def test_close_before_window_raises(fleet):
    with pytest.raises(ValueError):
        close_contract(_contract({fleet[0][0]}, set()), {}, 1999, PARAMS)


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.floats(0, 10)), min_size=1, max_size=10))
def test_trust_conservation(members):
    people = [vehicle(0, i)[0] for i in range(1, len(members) + 1)]
    agree = {p for p, (a, _) in zip(people, members) if a}
    disagree = {p for p, (a, _) in zip(people, members) if not a}
    stakes = {p: s for p, (_, s) in zip(people, members)}
    verdict, ups = close_contract(_contract(agree, disagree), stakes, 2000, PARAMS)
    adds = [u for u in ups if u.op == "add"]
    sets = [u for u in ups if u.op == "set"]
    assert all(u.value == 1 for u in adds) and all(u.value == -1 for u in sets)
    winners = {u.vehicle for u in adds}
    assert sum(u.value for u in adds) == len(winners)
    if verdict is Verdict.Tie:
        assert ups == []
    elif verdict is Verdict.DebateUpheld:
        assert winners == agree | {DEBATE} and {u.vehicle for u in sets} == disagree
    else:
        assert winners == disagree and {u.vehicle for u in sets} == agree | {DEBATE}


# -- redress --------------------------------------------------------------------

def _upheld(agree, disagree):
    c = _contract(agree, disagree)
    c.status, c.verdict = ContractStatus.Closed, Verdict.DebateUpheld
    return c


def test_redress_hand_trace_fires(fleet):
    s1 = fleet[0][0]
    o1, o2 = fleet[1], fleet[2]
    c = _upheld({s1}, {o1[0]})
    stakes = {DEBATE: 1.0, s1: 3.0, o1[0]: 6.0, o2[0]: 4.0}    # G_s = 4, G_o = 10
    res = handle_redress(redress(o2), [c], stakes, n_th=5.0)
    assert res.fired and res.margin == pytest.approx(6.0)
    assert c.status is ContractStatus.Redressed
    got = as_dict(res.updates)
    assert got[(s1, "set")] == -1 and got[(DEBATE, "set")] == -1
    assert got[(o1[0], "add")] == 1 and got[(o2[0], "add")] == 1


def test_redress_equal_stakes_is_noop(fleet):
    s1, o1 = fleet[0][0], fleet[1]
    c = _upheld({s1}, set())
    res = handle_redress(redress(o1), [c], {s1: 10.0, o1[0]: 10.0}, n_th=5.0)
    assert not res.fired and res.margin == 0.0 and res.updates == ()
    assert c.status is ContractStatus.Closed


def test_redress_without_history_is_noop(fleet):
    assert handle_redress(redress(fleet[0]), [], {}, n_th=5.0) is None


@settings(max_examples=60, deadline=None)
@given(sup=st.floats(0, 20), opp=st.floats(0, 20), hi=st.floats(0, 20), lo=st.floats(0, 20))
def test_redress_monotone_in_threshold(sup, opp, hi, lo):
    if lo > hi:
        hi, lo = lo, hi
    s1, o1 = vehicle(0, 1), vehicle(0, 2)
    stakes = {DEBATE: 0.0, s1[0]: sup, o1[0]: opp}
    fired_hi = handle_redress(redress(o1), [_upheld({s1[0]}, set())], stakes, n_th=hi).fired
    fired_lo = handle_redress(redress(o1), [_upheld({s1[0]}, set())], stakes, n_th=lo).fired
    assert not fired_hi or fired_lo


# -- transfer -------------------------------------------------------------------

REGISTRY = RegionRegistry([Region(0, 10, frozenset({1}), (0.0, 0.0)), Region(1, 10, center=(20000.0, 0.0)),
                           Region(2, 10, center=(0.0, 40000.0))])


def _ledger_with(region, v, **fields):
    led = Ledger(region)
    ups = tuple(StateUpdate(v, k, "set", val) for k, val in fields.items())
    return append_block(led, Block(region, 0, led.head_hash, state_updates=ups))


def _transfer_tx(who, dest=1, loc=(9900.0, 0.0)):
    vid, kp = who
    return make_transaction(kp, vid, Scid.TransferRequest, region=dest, location=loc, time=0)


def _apply(led, ups):
    return append_block(led, Block(led.region, led.next_round, led.head_hash, state_updates=tuple(ups)))


def test_transfer_hand_trace(fleet):
    v = fleet[0][0]
    origin = _ledger_with(0, v, tp=5, pot=40.0, active=1)
    res = handle_transfer(_transfer_tx(fleet[0]), origin, Ledger(1), REGISTRY)
    dest = _apply(Ledger(1), res.destination_updates)
    origin = _apply(origin, res.origin_updates)
    assert dest.get(v, "tp") == 5 and dest.get(v, "pot") == 40.0 and dest.get(v, "active") == 1
    assert origin.get(v, "tp") == 0 and origin.get(v, "pot") == 40.0 and origin.get(v, "active") == 0


def test_transfer_carries_sanction(fleet):
    v = fleet[0][0]
    res = handle_transfer(_transfer_tx(fleet[0]), _ledger_with(0, v, tp=-1, pot=3.0), Ledger(1), REGISTRY)
    assert res.destination_updates[0] == StateUpdate(v, "tp", "set", -1)


def test_transfer_from_interior_rejected(fleet):
    with pytest.raises(TransferRejected):
        handle_transfer(_transfer_tx(fleet[0], loc=(100.0, 0.0)), _ledger_with(0, fleet[0][0], tp=1),
                        Ledger(1), REGISTRY)


def test_transfer_to_non_neighbour_rejected(fleet):
    with pytest.raises(TransferRejected):
        handle_transfer(_transfer_tx(fleet[0], dest=2, loc=(0.0, 19900.0)),
                        _ledger_with(0, fleet[0][0], tp=1), Ledger(2), REGISTRY)


@settings(max_examples=40, deadline=None)
@given(tp=st.integers(-1, 50), pot=st.floats(0, 1e4), y=st.floats(-400, 400))
def test_transfer_conservation(tp, pot, y):
    who = vehicle(0, 7)
    v = who[0]
    origin = _ledger_with(0, v, tp=tp, pot=pot, active=1)
    res = handle_transfer(_transfer_tx(who, loc=(10000.0 + y, 123.0)), origin, Ledger(1), REGISTRY)
    dest = _apply(Ledger(1), res.destination_updates)
    after = _apply(origin, res.origin_updates)
    assert dest.get(v, "tp") == tp and after.get(v, "tp") == 0
    assert dest.get(v, "pot") == after.get(v, "pot") == pot


# -- rounds ---------------------------------------------------------------------

def _chain(people, **kw):
    chain = RegionChain(0, PARAMS, **kw)
    for vid, _ in people:
        chain.register(vid, 100.0)
    chain.register(DEBATE, 100.0)
    chain.genesis(0)
    return chain


def test_empty_round_advances(fleet):
    chain = _chain(fleet)
    block = chain.step(22_000)
    assert block.transactions == () and block.state_updates == ()
    assert len(chain.ledger) == 2


def test_vote_cycle_block_matches_close_contract(fleet):
    chain = _chain(fleet)
    pending = [stance(fleet[0], "disagree", t=100), stance(fleet[1], "agree", t=150),
               stance(fleet[2], "agree", t=160)]
    block = build_round_block(chain, pending, 3000)
    table = ContractTable()
    for tx in pending:
        handle_disagreement(tx, 3000, table, PARAMS)
    _, expected = close_contract(table.contracts[0], chain.stake_view().stakes, 3000, PARAMS)
    assert list(block.state_updates) == expected


def test_ordering_does_not_change_digest(fleet):
    chain = _chain(fleet)
    pending = [stance(fleet[i], "agree" if i % 2 else "disagree", t=100 + 7 * i) for i in range(6)]
    a = build_round_block(chain, pending, 3000)
    b = build_round_block(chain, list(reversed(pending)), 3000)
    assert a.hash == b.hash


def test_trust_stays_in_domain_over_rounds(fleet):
    chain = _chain(fleet)
    t = 0
    for r in range(6):
        for i, who in enumerate(fleet):
            chain.submit(stance(who, "agree" if (i + r) % 3 else "disagree", t=t + 10 + i))
        t += 3000
        chain.step(t)
    for v, rec in chain.ledger.state.items():
        assert rec.get("tp", 0) >= -1 and int(rec.get("tp", 0)) == rec.get("tp", 0)


def test_chain_runs_are_bit_identical(fleet):
    def run():
        chain = _chain(fleet)
        for i, who in enumerate(fleet[:5]):
            chain.submit(stance(who, "disagree" if i < 3 else "agree", t=50 + i))
        for t in (3000, 6000, 9000):
            chain.step(t)
        return chain.ledger.head_hash
    assert run() == run()


def test_failed_quorum_appends_empty_block(fleet):
    chain = _chain(fleet, votes=lambda v, block: False)
    chain.submit(stance(fleet[0], "disagree", t=10))
    block = chain.step(3000)
    assert block.transactions == () and chain.audit[-1]["committed"] is False
    # the stance stays pending and the contract is rolled back
    assert chain.pending and chain.contracts.contracts == []


def test_genesis_twice_rejected(fleet):
    chain = _chain(fleet)
    with pytest.raises(ValueError):
        chain.genesis(1)


def test_pot_dispute_condemns_reporter(fleet):
    from cvtrust.pot import PotReportTx, flag_count_dispute
    reporter, rkey = fleet[0]
    counted = fleet[1][0]
    chain = _chain(fleet)
    report = PotReportTx(reporter, 0, {counted: 1000})
    for who in fleet[2:7]:
        tx = flag_count_dispute(report, {counted: 100}, flagger=who[0], keypair=who[1],
                                location=(0.0, 0.0), time=50)
        chain.submit(tx)
    chain.step(3000)
    assert chain.trust_points(reporter) == -1
