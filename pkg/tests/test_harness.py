import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from fido2d.devices import UserMode
from fido2d.harness import scenarios
from fido2d.harness.explore import ThreatConfig, explore, generate, run_seed, shrink
from fido2d.harness.lemmas import LEMMA1, check_all
from fido2d.harness.schedule import Bounds, Schedule, run
from fido2d.harness.world import ProtocolConfig, ScheduleError, World, validate_schedule
from fido2d.server import ServerConfig
from fido2d.trace import (
    COMPROMISE_DEV1,
    NEW_SERVER,
    PHISH_BEGIN,
    REGISTERED,
    TRANSACTION_BEGIN,
    TRANSACTION_COMPLETE,
)

SID = scenarios.SERVER


def labels(world):
    return [e.label for e in world.trace]


def completed(world):
    return [e.transaction for e in world.trace if e.label == TRANSACTION_COMPLETE]


# -- schedules ----------------------------------------------------------------


def test_empty_schedule_empty_trace():
    world = run(Schedule(0, []))
    assert list(world.trace) == [] and world.log == []


def test_honest_schedule():
    world = run(scenarios.honest())
    assert labels(world) == [NEW_SERVER, REGISTERED, TRANSACTION_BEGIN, TRANSACTION_COMPLETE]
    begin, done = world.trace.events[2:]
    assert (begin.initiator, begin.server, begin.transaction) == (done.initiator, done.server, done.transaction)
    assert all(v.holds for v in check_all(world.trace))


@pytest.mark.parametrize(
    "steps, match",
    [
        ([["launch", SID]], "unknown action"),
        ([["new_server"]], "arguments"),
        ([["new_server", SID], ["register", "alice", SID], ["begin", "alice", "nowhere.example", "d"]], "server"),
        ([["new_server", SID], ["register", "alice", SID], ["begin", "mallory", SID, "d"]], "user"),
        ([["new_server", SID], ["register", "alice", SID], ["compromise", "alice", SID, "C"]], "role"),
        ([["new_server", SID], ["deliver", "$nothing"]], "unbound label"),
        ([["new_server", SID], ["deliver", -1]], "selector"),
        ([["new_server", SID], ["register", "alice", SID], ["begin", "alice", SID, 5]], "text"),
        (["new_server"], "unknown action"),
    ],
)
def test_schedule_errors_before_any_step(steps, match):
    with pytest.raises(ScheduleError, match=match):
        validate_schedule(steps)
    with pytest.raises(ScheduleError):
        run(Schedule(0, steps))


def test_step_bound_enforced():
    steps = [["new_server", SID]] + [["drop", 0]] * 5
    with pytest.raises(ScheduleError, match="bound"):
        run(Schedule(0, steps, Bounds(max_steps=3)))


def test_same_seed_same_log():
    a, b = run(scenarios.replay(seed=3)[0]), run(scenarios.replay(seed=3)[0])
    assert a.log_text() == b.log_text() and a.log_digest() == b.log_digest()
    assert run(scenarios.honest(seed=4)).log_digest() != run(scenarios.honest(seed=5)).log_digest()


def test_schedule_file_round_trip(tmp_path):
    original = scenarios.manipulation(seed=9)
    path = tmp_path / "s.json"
    path.write_text(original.to_json())
    loaded = Schedule.load(path)
    assert loaded == original
    assert Schedule.load(path, seed=10).seed == 10
    assert run(loaded).log_digest() == run(original).log_digest()


def test_bad_scenario_file(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    with pytest.raises(ScheduleError):
        Schedule.load(path)
    path.write_text(json.dumps({"user_mode": "sometimes", "steps": []}))
    with pytest.raises(ScheduleError):
        Schedule.load(path)


def test_skipped_actions_are_logged():
    world = World(0)
    world.apply(["new_server", SID])
    status = world.apply(["deliver", 42])
    assert status.startswith("skip: NotDerivable")
    assert json.loads(world.log[-1])["status"] == status


# -- scripted attacks -----------------------------------------------------------


def test_manipulation_no_compare_succeeds():
    world = run(scenarios.manipulation(mode=UserMode.NO_COMPARE))
    assert completed(world) == [scenarios.FRAUD]
    l1, l2 = check_all(world.trace)
    assert not l1.holds and not l2.holds
    assert len(l1.counterexample) <= 15


def test_manipulation_compare_aborted_at_device_a():
    world = run(scenarios.manipulation(mode=UserMode.COMPARE))
    assert completed(world) == []
    pending = world.servers[SID].transactions
    assert any(p.state.value == "Aborted" and p.reason == "declined on device A" for p in pending)
    assert all(v.holds for v in check_all(world.trace))


@pytest.mark.parametrize("mode", list(UserMode))
def test_initiation_never_succeeds(mode):
    world = run(scenarios.initiation(mode=mode))
    assert completed(world) == []
    assert all(v.holds for v in check_all(world.trace))


def test_dual_compromise_exercises_escape():
    world = run(scenarios.dual_compromise())
    assert completed(world) == [scenarios.FRAUD]
    assert TRANSACTION_BEGIN not in labels(world)
    assert all(v.holds for v in check_all(world.trace))


@pytest.mark.parametrize("mode", list(UserMode))
@pytest.mark.parametrize("policy", ["relay", "replace"])
def test_phishing_relay_defeated(mode, policy):
    world = run(scenarios.phishing_relay(mode=mode, policy=policy))
    assert PHISH_BEGIN in labels(world)
    assert completed(world) == []


def test_replay_scenario_single_completion():
    schedule, live = scenarios.replay()
    world = run(schedule)
    assert world.log_digest() == live.log_digest()
    assert completed(world) == [scenarios.INTENDED]
    assert all(v.holds for v in check_all(world.trace))
    attempts = sum(1 for a in schedule.steps if a[0] in ("replay", "splice"))
    assert attempts > 50


# -- exploration ------------------------------------------------------------


def test_threat_parsing():
    t = ThreatConfig.parse("phishing+compromise-a+no-compare")
    assert t == ThreatConfig(compromise_a=True, phishing=True, user_mode=UserMode.NO_COMPARE)
    assert ThreatConfig.parse(t.name) == t
    assert ThreatConfig.parse("b,a") == ThreatConfig(True, True)
    with pytest.raises(ValueError):
        ThreatConfig.parse("quantum")
    assert not ThreatConfig.parse("b+no-compare").claims_security
    assert ThreatConfig.parse("b+a+no-compare").claims_security is False
    assert ThreatConfig.parse("a+phishing+no-compare").claims_security


def test_generated_schedules_replay_exactly():
    threats = ThreatConfig.parse("b+a+phishing")
    for i in range(20):
        schedule, live = generate(run_seed(5, i), Bounds(), threats)
        assert len(schedule.steps) <= Bounds().max_steps
        assert run(schedule).log_digest() == live.log_digest()


def test_explore_is_deterministic():
    threats = ThreatConfig.parse("b+phishing")
    a = explore(8, Bounds(), threats, runs=40)
    b = explore(8, Bounds(), threats, runs=40)
    assert a.log_text() == b.log_text()
    assert a.log_digest() == b.log_digest()
    assert explore(9, Bounds(), threats, runs=40).log_digest() != a.log_digest()


def test_explore_independent_of_worker_count():
    threats = ThreatConfig.parse("b+no-compare")
    one = explore(4, Bounds(), threats, runs=40, max_shrink=1)
    two = explore(4, Bounds(), threats, runs=40, max_shrink=1, workers=2)
    assert one.log_text() == two.log_text()
    assert [(v.index, v.lemma, v.shrunk) for v in one.violations] == [(v.index, v.lemma, v.shrunk) for v in two.violations]


def test_explore_finds_no_compare_attack_and_shrinks_it():
    report = explore(1, Bounds(), ThreatConfig.parse("b+no-compare"), runs=200, max_shrink=1)
    assert report.violations and report.ok and report.exit_code == 0
    first = report.violations[0]
    assert first.shrunk is not None and len(first.shrunk.steps) < len(first.schedule.steps)
    assert any(not v.holds for v in check_all(run(first.shrunk).trace) if v.lemma == first.lemma)


def test_exit_status_when_claimed_security_fails():
    # disabling the browser's echo check lets a compromised A swap requests
    report = explore(3, Bounds(), ThreatConfig.parse("a"), runs=300, protocol=ProtocolConfig(check_echo=False), max_shrink=0)
    assert report.violations and not report.ok and report.exit_code == 1


def test_server_id_check_ablation_found():
    protocol = ProtocolConfig(server=ServerConfig(check_server_id=False))
    report = explore(3, Bounds(), ThreatConfig.parse("phishing+no-compare"), runs=300, protocol=protocol, max_shrink=0)
    assert report.violations and not report.ok


def test_shrink_keeps_violation_and_is_idempotent():
    schedule = scenarios.manipulation()
    padded = Schedule(schedule.seed, schedule.steps[:2] + [["new_server", "shop.example"]] + schedule.steps[2:],
                      schedule.bounds, schedule.config)
    small = shrink(padded, LEMMA1)
    assert ["new_server", "shop.example"] not in small.steps
    assert not check_all(run(small).trace)[0].holds
    assert shrink(small, LEMMA1).steps == small.steps


def test_shrink_leaves_passing_schedule_alone():
    schedule = scenarios.honest()
    assert shrink(schedule, LEMMA1).steps == schedule.steps


@settings(max_examples=40)
@given(st.integers(0, 2**63), st.sampled_from(["b", "a", "phishing", "a+phishing", "b+phishing", "a+b+phishing"]))
def test_random_schedules_respect_perfect_crypto(seed, threats):
    schedule, world = generate(seed, Bounds(), ThreatConfig.parse(threats))
    assert world.adversary.audit(world.slots()) == []
    # uncompromised credentials never put secret material on the wire
    wire = b"".join(e.payload for e in world.network.history)
    for slot in world.slots():
        if slot.credential is not None and not slot.compromised:
            raw = slot.credential.secret.private_bytes_raw()
            assert raw not in wire
    # counters accepted by servers strictly increase per credential
    for server in world.servers.values():
        for p in server.transactions:
            if p.proof_a is not None:
                assert p.proof_b.auth_data.counter >= 1


@settings(max_examples=40)
@given(st.integers(0, 2**63), st.sampled_from(["b", "a", "phishing", "a+phishing", "b+phishing"]))
def test_one_out_of_two_on_random_schedules(seed, threats):
    schedule, world = generate(seed, Bounds(), ThreatConfig.parse(threats))
    assert all(v.holds for v in check_all(world.trace))


def test_random_device_outputs_monotone_counters():
    schedule, world = generate(run_seed(2, 0), Bounds(), ThreatConfig.parse("a+b"))
    for server in world.servers.values():
        accepted = [p for p in server.transactions if p.state.value == "Complete"]
        for attr in ("proof_b", "proof_a"):
            by_user = {}
            for p in accepted:
                by_user.setdefault(p.username, []).append(getattr(p, attr).auth_data.counter)
            for counters in by_user.values():
                assert counters == sorted(set(counters))
