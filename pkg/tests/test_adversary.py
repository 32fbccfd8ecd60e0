import pytest

from fido2d.adversary import Adversary, AuthenticChannelViolation, Network, NotDerivable
from fido2d.harness.world import World
from fido2d.messages import (
    TransactionChallenge,
    TransactionOptions,
    TransactionRequest,
    TransactionResponse,
    decode,
    encode,
)
from fido2d.trace import TRANSACTION_COMPLETE

SID = "bank.example"
D = "pay 10 to bob"


def registered(seed=1):
    world = World(seed)
    world.apply(["new_server", SID])
    world.apply(["register", "alice", SID])
    return world


def find(world, kind, dest=None):
    return [e for e in world.network.history
            if isinstance(_decoded(e.payload), kind) and (dest is None or e.dest == dest)]


def _decoded(payload):
    try:
        return decode(payload)
    except ValueError:
        return None


def completes(world):
    return [e for e in world.trace if e.label == TRANSACTION_COMPLETE]


def test_registration_leaks_public_keys():
    world = registered()
    account = world.servers[SID].accounts["alice"]
    assert account.pub_b in world.adversary.public_keys
    assert account.pub_a in world.adversary.public_keys
    assert "alice" in world.adversary.usernames


def test_transaction_data_observed_in_clear():
    world = registered()
    world.apply(["begin", "alice", SID, D])
    assert D in world.adversary.transaction_data
    assert encode(TransactionRequest("alice", D)) in world.adversary.knowledge


def test_authentic_messages_readable_not_alterable():
    world = registered()
    world.apply(["begin", "alice", SID, D])
    req = find(world, TransactionRequest)[-1]
    world.apply(["deliver", req.mid])
    challenge = find(world, TransactionChallenge)[-1]
    assert challenge.authentic and challenge.payload in world.adversary.knowledge
    with pytest.raises(AuthenticChannelViolation):
        world.adversary.modify(challenge.mid, b"tampered")
    with pytest.raises(AuthenticChannelViolation):
        world.adversary.rewrite(challenge.mid, transaction_data="pay 1000 to mallory")
    assert world.apply(["modify", challenge.mid, {"transaction_data": "x"}]).startswith("skip: AuthenticChannelViolation")
    world.apply(["drop", challenge.mid])  # dropping is allowed
    assert challenge.mid not in world.network.in_flight


def test_non_authentic_messages_fully_controlled():
    world = registered()
    world.apply(["begin", "alice", SID, D])
    req = find(world, TransactionRequest)[-1]
    world.apply(["modify", req.mid, {"transaction_data": "pay 1000 to mallory"}])
    rewritten = world.network.history[-1]
    assert decode(rewritten.payload) == TransactionRequest("alice", "pay 1000 to mallory")
    assert rewritten.origin == req.origin and not rewritten.authentic
    # B pairs the echo with its own request and refuses the swapped challenge
    reply_mid = len(world.network.history)
    world.apply(["deliver", rewritten.mid])
    world.apply(["deliver", reply_mid])
    assert find(world, TransactionResponse) == []


def test_replayed_authentic_copy_keeps_origin():
    net = Network()
    env = net.send("bank", "alice/A", b"payload", authentic=True)
    copy = net.replay(env.mid, "bob/A")
    assert (copy.origin, copy.authentic, copy.dest) == ("bank", True, "bob/A")
    assert net.authentic_forgeries() == []


def test_injected_messages_never_authentic():
    adv = Adversary(Network())
    env = adv.inject("alice/A", b"x", origin="bank")
    assert not env.authentic


def test_replayed_a_assertion_rejected():
    world = registered()
    world.apply(["begin", "alice", SID, D])
    while world.network.in_flight:
        world.apply(["deliver", min(world.network.in_flight)])
    assert len(completes(world)) == 1
    a_response = [e for e in find(world, TransactionResponse) if e.origin == "alice/A"][-1]
    world.apply(["replay", a_response.mid])
    world.apply(["deliver", len(world.network.history) - 1])
    assert len(completes(world)) == 1
    assert "UnknownChallenge" in world.log[-1]


def test_compromised_b_key_signs_accepted_challenge():
    world = registered()
    world.apply(["compromise", "alice", SID, "B"])
    world.apply(["request", "alice", SID, "pay 1000 to mallory", "$req"])
    world.apply(["deliver", "$req", "$ch"])
    world.apply(["forge", "B", "alice", SID, "$ch", None, "$resp"])
    world.apply(["deliver", "$resp", "$opt_a"])
    options = decode(world.network.history[world.labels["$opt_a"]].payload)
    assert isinstance(options, TransactionOptions) and options.transaction_data == "pay 1000 to mallory"


def test_compromised_a_key_confirms_arbitrary_data():
    world = registered()
    world.apply(["compromise", "alice", SID, "A"])
    world.apply(["begin", "alice", SID, D, "$req"])
    world.apply(["deliver", "$req", "$ch"])
    world.apply(["deliver", "$ch", "$resp"])
    world.apply(["deliver", "$resp", "$opt_a"])
    world.apply(["forge", "A", "alice", SID, "$opt_a", D, "$forged"])
    world.apply(["drop", "$opt_a"])
    world.apply(["deliver", "$forged"])
    assert [e.transaction for e in completes(world)] == [D]


def test_forging_without_leak_not_derivable():
    world = registered()
    world.apply(["begin", "alice", SID, D, "$req"])
    world.apply(["deliver", "$req", "$ch"])
    with pytest.raises(NotDerivable):
        world.adversary.forge_response("B", "alice", SID, world.labels["$ch"])
    assert world.apply(["forge", "B", "alice", SID, "$ch"]).startswith("skip: NotDerivable")


def test_splice_requires_known_parts():
    world = registered()
    with pytest.raises(NotDerivable):
        world.adversary.splice(0, 0, "alice", SID)


def test_audit_clean_after_attacks():
    world = registered()
    world.apply(["compromise", "alice", SID, "B"])
    world.apply(["begin", "alice", SID, D, "$req"])
    world.apply(["deliver", "$req", "$ch"])
    world.apply(["forge", "B", "alice", SID, "$ch"])
    world.apply(["deliver", "$ch"])
    assert world.adversary.audit(world.slots()) == []


def test_phishing_relay_defeated_by_server_binding():
    world = registered()
    for action in world.adversary.run_phish("alice", SID, D):
        world.apply(action)
    assert completes(world) == []
    assert any("server id mismatch" in line for line in world.log)


def test_phish_answer_needs_a_lured_request():
    world = registered()
    world.apply(["begin", "alice", SID, D, "$req"])
    assert world.apply(["phish_answer", "$req", None]).startswith("skip: NotDerivable")


def test_phisher_made_up_challenge_goes_nowhere():
    world = registered()
    world.apply(["phish", "alice", SID, D, "$lure"])
    world.apply(["phish_answer", "$lure", None, "$answer"])
    world.apply(["deliver", "$answer", "$signed"])
    signed = world.network.history[world.labels["$signed"]]
    assert signed.dest == f"phish-{SID}"
    world.apply(["splice", "$signed", "$answer", "alice", SID, "$spliced"])
    world.apply(["deliver", "$spliced"])
    assert completes(world) == []


def test_phishing_with_both_devices_compromised_succeeds():
    world = registered()
    world.apply(["compromise", "alice", SID, "B"])
    world.apply(["compromise", "alice", SID, "A"])
    world.apply(["phish", "alice", SID, D, "$lure"])
    world.apply(["request", "alice", SID, "pay 1000 to mallory", "$req"])
    world.apply(["deliver", "$req", "$ch"])
    world.apply(["forge", "B", "alice", SID, "$ch", None, "$b"])
    world.apply(["deliver", "$b", "$opt_a"])
    world.apply(["forge", "A", "alice", SID, "$opt_a", "pay 1000 to mallory", "$a"])
    world.apply(["drop", "$opt_a"])
    world.apply(["deliver", "$a"])
    assert [e.transaction for e in completes(world)] == ["pay 1000 to mallory"]
