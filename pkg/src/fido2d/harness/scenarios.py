"""Scripted schedules: the honest flow and the malware attacks."""

from __future__ import annotations

from ..devices import UserMode
from ..messages import TransactionOptions, TransactionResponse
from .schedule import Bounds, Schedule
from .world import ProtocolConfig, World

SERVER = "bank.example"
USER = "alice"
INTENDED = "pay 10 to bob"
FRAUD = "pay 1000 to mallory"


def _setup() -> list:
    return [["new_server", SERVER], ["register", USER, SERVER]]


def honest_steps(data: str = INTENDED) -> list:
    """Registration, one transaction, both ceremonies, acceptance."""
    return [
        ["begin", USER, SERVER, data, "$req"],
        ["deliver", "$req", "$ch_b"],
        ["deliver", "$ch_b", "$resp_b"],
        ["deliver", "$resp_b", "$opt_a"],
        ["deliver", "$opt_a", "$resp_a"],
        ["deliver", "$resp_a"],
    ]


def honest(seed: int = 0, mode: UserMode = UserMode.COMPARE) -> Schedule:
    return Schedule(seed, _setup() + honest_steps(), config=ProtocolConfig(user_mode=mode))


def manipulation(seed: int = 0, mode: UserMode = UserMode.NO_COMPARE) -> Schedule:
    """Malware on B rewrites the user's transaction.

    The user's own ceremony on B runs, so the user is expecting a
    confirmation; malware suppresses the user's signed response and drives a
    second ceremony for the attacker's data with the leaked B key.
    """
    steps = _setup() + [
        ["compromise", USER, SERVER, "B"],
        ["begin", USER, SERVER, INTENDED, "$req"],
        ["deliver", "$req", "$ch_user"],
        ["deliver", "$ch_user", "$resp_user"],
        ["drop", "$resp_user"],
        ["request", USER, SERVER, FRAUD, "$evil"],
        ["deliver", "$evil", "$ch_evil"],
        ["forge", "B", USER, SERVER, "$ch_evil", None, "$forged_b"],
        ["deliver", "$forged_b", "$opt_a"],
        ["deliver", "$opt_a", "$answer_a"],
        ["deliver", "$answer_a"],
    ]
    return Schedule(seed, steps, config=ProtocolConfig(user_mode=mode))


def initiation(seed: int = 0, mode: UserMode = UserMode.COMPARE) -> Schedule:
    """Malware on A plus a transaction the attacker starts itself.

    The attacker has no first factor to offer: B never signs a challenge for
    a request the user did not submit, and A's key does not verify as B's.
    It then tries to hijack a transaction the user starts.
    """
    steps = _setup() + [
        ["compromise", USER, SERVER, "A"],
        ["request", USER, SERVER, FRAUD, "$evil"],
        ["deliver", "$evil", "$ch_evil"],
        ["deliver", "$ch_evil", "$b_reply"],
        ["forge", "A", USER, SERVER, "$ch_evil", FRAUD, "$a_as_b"],
        ["deliver", "$a_as_b"],
        ["begin", USER, SERVER, INTENDED, "$req"],
        ["request", USER, SERVER, FRAUD, "$evil2"],
        ["deliver", "$evil2", "$ch_evil2"],
        ["deliver", "$ch_evil2"],
        ["deliver", "$req", "$ch_user"],
        ["deliver", "$ch_user", "$resp_b"],
        ["deliver", "$resp_b", "$opt_a"],
        ["drop", "$opt_a"],
        ["forge", "A", USER, SERVER, "$opt_a", FRAUD, "$forged_a"],
        ["deliver", "$forged_a"],
    ]
    return Schedule(seed, steps, config=ProtocolConfig(user_mode=mode))


def dual_compromise(seed: int = 0, mode: UserMode = UserMode.COMPARE) -> Schedule:
    """Both devices compromised: the attacker completes its own transaction."""
    steps = _setup() + [
        ["compromise", USER, SERVER, "B"],
        ["compromise", USER, SERVER, "A"],
        ["request", USER, SERVER, FRAUD, "$evil"],
        ["deliver", "$evil", "$ch"],
        ["forge", "B", USER, SERVER, "$ch", None, "$fb"],
        ["deliver", "$fb", "$opt_a"],
        ["drop", "$opt_a"],
        ["forge", "A", USER, SERVER, "$opt_a", FRAUD, "$fa"],
        ["deliver", "$fa"],
    ]
    return Schedule(seed, steps, config=ProtocolConfig(user_mode=mode))


def phishing_relay(seed: int = 0, mode: UserMode = UserMode.COMPARE, policy: str = "relay") -> Schedule:
    from ..adversary import Adversary, Network

    fragment = Adversary(Network()).run_phish(USER, SERVER, INTENDED, policy)
    return Schedule(seed, _setup() + fragment, config=ProtocolConfig(user_mode=mode))


def replay(seed: int = 0, mode: UserMode = UserMode.COMPARE) -> tuple[Schedule, World]:
    """Complete one transaction, then replay every captured assertion.

    Each assertion the attacker has seen is spliced onto every challenge it
    knows, and every captured response envelope is re-sent verbatim, while
    fresh transactions keep live challenges available at the server. The
    step list depends on what was captured, so it is built against a live
    world; the returned schedule replays it exactly.
    """
    config = ProtocolConfig(user_mode=mode)
    steps = _setup() + honest_steps()
    world = World(seed, config)
    for action in steps:
        world.apply(action)

    def do(action):
        steps.append(action)
        world.apply(action)

    def drain():
        while world.network.in_flight:
            do(["deliver", min(world.network.in_flight)])

    # live challenges at the server: two awaiting B (attacker requests) and
    # one awaiting A (a user transaction whose device-A options are dropped)
    do(["request", USER, SERVER, INTENDED, "$live1"])
    do(["deliver", "$live1"])
    do(["request", USER, SERVER, INTENDED, "$live2"])
    do(["deliver", "$live2"])
    do(["begin", USER, SERVER, "pay 20 to carol", "$live3"])
    do(["deliver", "$live3", "$ch3"])
    do(["deliver", "$ch3", "$resp3"])
    do(["deliver", "$resp3", "$opt3"])
    do(["drop", "$opt3"])
    drain()
    adv = world.adversary
    for mid in [k.mid for k in adv.assertions if isinstance(k.message, TransactionResponse)]:
        do(["replay", mid])
        drain()
    for a_mid in [k.mid for k in adv.assertions]:
        for c_mid in [k.mid for k in adv.challenges]:
            do(["splice", a_mid, c_mid, USER, SERVER])
            drain()
    for k in list(adv.challenges):
        if isinstance(k.message, TransactionOptions) and k.message.transaction_data is not None:
            do(["replay", k.mid])
            drain()
    bounds = Bounds(max_steps=max(len(steps), 200))
    return Schedule(seed, steps, bounds, config), world
