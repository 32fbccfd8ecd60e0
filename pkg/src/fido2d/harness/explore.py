"""Randomised bounded exploration of attacker schedules.

Each run draws a schedule online: a seeded policy looks at the live world
and picks the next honest or adversarial action, which is recorded so the
run replays exactly through `run`. Lemma violations are shrunk by greedy
step deletion. Coverage is probabilistic; the scripted scenarios pin down
the attacks that must (or must not) succeed.
"""

from __future__ import annotations

import hashlib
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

from ..devices import UserMode
from ..messages import (
    MalformedMessage,
    TransactionChallenge,
    TransactionOptions,
    TransactionRequest,
    TransactionResponse,
    decode,
)
from ..trace import TRANSACTION_BEGIN, TRANSACTION_COMPLETE, TraceEvent
from .lemmas import LEMMA1, LEMMA2, Verdict, check_all
from .schedule import Bounds, Schedule, run
from .world import OPS, ProtocolConfig, ScheduleError, World, validate_schedule

SERVERS = ("bank.example", "shop.example")
USERS = ("alice", "bob", "carol")
USER_DATA = ("pay 10 to bob", "pay 20 to carol")
ATTACKER_DATA = ("pay 1000 to mallory",)


@dataclass(frozen=True)
class ThreatConfig:
    compromise_b: bool = False
    compromise_a: bool = False
    phishing: bool = False
    user_mode: UserMode = UserMode.COMPARE

    @property
    def name(self) -> str:
        parts = [p for p, on in (("compromise-b", self.compromise_b), ("compromise-a", self.compromise_a),
                                 ("phishing", self.phishing)) if on]
        return "+".join(parts + [self.user_mode.value])

    @property
    def claims_security(self) -> bool:
        """Whether one-out-of-two security is claimed under this threat.

        The only insecure single-device case is a compromised B with a user
        who does not compare transaction data.
        """
        return not (self.compromise_b and self.user_mode is UserMode.NO_COMPARE)

    @classmethod
    def parse(cls, text: str) -> "ThreatConfig":
        """Parse e.g. "phishing+compromise-a+compare" (commas also work)."""
        flags = dict(compromise_b=False, compromise_a=False, phishing=False)
        mode = UserMode.COMPARE
        aliases = {
            "compromise-b": "compromise_b", "b": "compromise_b", "compromise_b": "compromise_b",
            "compromise-a": "compromise_a", "a": "compromise_a", "compromise_a": "compromise_a",
            "phishing": "phishing", "phish": "phishing",
        }
        for token in text.replace(",", "+").split("+"):
            token = token.strip().lower()
            if not token or token == "none":
                continue
            if token in ("compare", "no-compare", "nocompare", "no_compare"):
                mode = UserMode.COMPARE if token == "compare" else UserMode.NO_COMPARE
            elif token in aliases:
                flags[aliases[token]] = True
            else:
                raise ValueError(f"unknown threat {token!r}")
        return cls(user_mode=mode, **flags)


@dataclass
class Violation:
    index: int
    seed: int
    lemma: str
    schedule: Schedule
    shrunk: Optional[Schedule]
    counterexample: tuple[TraceEvent, ...]


@dataclass
class ExploreReport:
    threats: ThreatConfig
    seed: int
    runs: int
    violations: list[Violation] = field(default_factory=list)
    completes: int = 0
    begins: int = 0
    steps: int = 0
    log: list[str] = field(default_factory=list)

    def verdicts(self) -> list[Verdict]:
        out = []
        for lemma in (LEMMA1, LEMMA2):
            found = [v for v in self.violations if v.lemma == lemma]
            out.append(Verdict(lemma, not found, found[0].counterexample if found else None))
        return out

    @property
    def ok(self) -> bool:
        """False iff a lemma failed where security is claimed."""
        return not (self.threats.claims_security and self.violations)

    @property
    def exit_code(self) -> int:
        return 0 if self.ok else 1

    def log_text(self) -> str:
        return "".join(line + "\n" for line in self.log)

    def log_digest(self) -> str:
        return hashlib.sha256(self.log_text().encode()).hexdigest()


def run_seed(master: int, index: int) -> int:
    digest = hashlib.blake2b(f"{master}:{index}".encode(), digest_size=8).digest()
    return int.from_bytes(digest, "big")


class _Policy:
    """Seeded choice of the next action given the live world."""

    def __init__(self, rng: random.Random, world: World, bounds: Bounds, threats: ThreatConfig):
        self.rng = rng
        self.world = world
        self.bounds = bounds
        self.threats = threats
        self.begins = 0
        self.requests = 0
        self.phished: list[str] = []
        self.counter = 0
        self.attacks = rng.randint(6, 36)

    def label(self) -> str:
        self.counter += 1
        return f"$g{self.counter}"

    def setup(self) -> list:
        rng = self.rng
        servers = list(SERVERS[: rng.randint(1, len(SERVERS))])
        n_users = rng.randint(1, min(self.bounds.max_accounts, len(USERS)))
        accounts = []
        for _ in range(rng.randint(n_users, self.bounds.max_accounts)):
            pair = (USERS[rng.randrange(n_users)], rng.choice(servers))
            if pair not in accounts:
                accounts.append(pair)
        return [["new_server", s] for s in servers] + [["register", u, s] for u, s in accounts]

    def _data(self) -> str:
        known = self.world.adversary.transaction_data
        pool = ATTACKER_DATA + USER_DATA + tuple(known[-4:])
        return self.rng.choice(pool)

    def _challenge_for(self, role: str, user: str, server_id: str) -> Optional[int]:
        adv = self.world.adversary
        if not adv.challenges:
            return None
        if self.rng.random() < 0.15:
            return self.rng.choice(adv.challenges).mid
        if role == "B":
            fit = [k.mid for k in adv.challenges if isinstance(k.message, TransactionChallenge)
                   and k.message.username == user and k.origin == server_id]
        else:
            fit = [k.mid for k in adv.challenges if isinstance(k.message, TransactionOptions)
                   and k.message.transaction_data is not None and k.dest == f"{user}/A" and k.origin == server_id]
        if not fit:
            return self.rng.choice(adv.challenges).mid
        # recent challenges are the live ones
        return fit[-1] if self.rng.random() < 0.7 else self.rng.choice(fit)

    def next(self) -> Optional[list]:
        rng, world = self.rng, self.world
        adv = world.adversary
        in_flight = world.network.in_flight
        accounts = world.accounts()
        budget_tx = self.begins < self.bounds.max_transactions
        budget_req = self.requests < self.bounds.max_transactions
        attack = self.attacks > 0
        if not in_flight and not (budget_tx or budget_req or attack):
            return None
        options: list[tuple[float, str]] = []
        if in_flight:
            options.append((8.0, "deliver"))
            options.append((0.3, "drop"))
        if accounts and budget_tx:
            options.append((2.0, "begin"))
            if self.threats.phishing:
                options.append((1.0, "phish"))
        if accounts and budget_req:
            options.append((1.5, "request"))
        if attack:
            if in_flight:
                options.append((1.0, "modify"))
            if self.phished:
                options.append((1.5, "phish_answer"))
            if world.network.history:
                options.append((1.0, "replay"))
            if adv.leaks:
                options.append((3.0, "forge"))
            if adv.assertions and adv.challenges:
                options.append((1.0, "splice"))
            options.append((0.1, "garbage"))
        if self._compromise_targets():
            options.append((0.7, "compromise"))
        if not in_flight:
            options.append((0.3, "stop"))
        total = sum(w for w, _ in options)
        pick = rng.random() * total
        for weight, kind in options:
            pick -= weight
            if pick <= 0:
                break
        if kind in self.ATTACKS:
            self.attacks -= 1
        return getattr(self, "_" + kind)(accounts)

    ATTACKS = frozenset({"modify", "phish_answer", "replay", "forge", "splice", "garbage"})

    def _compromise_targets(self) -> list:
        roles = [r for r, on in (("B", self.threats.compromise_b), ("A", self.threats.compromise_a)) if on]
        return [(u, s, r) for u, s in self.world.accounts() for r in roles
                if (u, s, r) not in self.world.adversary.leaks]

    def _stop(self, accounts):
        return None

    def _deliver(self, accounts):
        return ["deliver", self.rng.choice(list(self.world.network.in_flight))]

    def _drop(self, accounts):
        return ["drop", self.rng.choice(list(self.world.network.in_flight))]

    def _modify(self, accounts):
        rng = self.rng
        plain = [e for e in self.world.network.in_flight.values() if not e.authentic]
        if not plain:
            return ["deliver", rng.choice(list(self.world.network.in_flight))]
        env = rng.choice(plain)
        try:
            msg = decode(env.payload)
        except MalformedMessage:
            msg = None
        if isinstance(msg, TransactionRequest) and rng.random() < 0.8:
            return ["modify", env.mid, {"transaction_data": self._data()}]
        if isinstance(msg, (TransactionRequest, TransactionResponse)) and rng.random() < 0.5:
            return ["modify", env.mid, {"username": rng.choice(USERS)}]
        offset = rng.randrange(len(env.payload)) if env.payload else 0
        return ["modify", env.mid, {"offset": offset, "hex": rng.randbytes(1).hex()}]

    def _begin(self, accounts):
        self.begins += 1
        user, server_id = self.rng.choice(accounts)
        return ["begin", user, server_id, self.rng.choice(USER_DATA)]

    def _phish(self, accounts):
        self.begins += 1
        user, server_id = self.rng.choice(accounts)
        label = self.label()
        self.phished.append(label)
        return ["phish", user, server_id, self.rng.choice(USER_DATA), label]

    def _phish_answer(self, accounts):
        lure = self.rng.choice(self.phished)
        adv = self.world.adversary
        source = None
        if adv.challenges and self.rng.random() < 0.85:
            fit = [k.mid for k in adv.challenges if isinstance(k.message, TransactionChallenge)]
            source = self.rng.choice(fit or [k.mid for k in adv.challenges])
        return ["phish_answer", lure, source]

    def _request(self, accounts):
        self.requests += 1
        user, server_id = self.rng.choice(accounts)
        return ["request", user, server_id, self._data()]

    def _replay(self, accounts):
        rng, world = self.rng, self.world
        mid = rng.randrange(len(world.network.history))
        if rng.random() < 0.6:
            return ["replay", mid]
        dests = list(world.servers) + [f"{u}/{r}" for u in world.devices for r in "BA"]
        return ["replay", mid, rng.choice(dests)]

    def _forge(self, accounts):
        rng = self.rng
        user, server_id, role = rng.choice(list(self.world.adversary.leaks))
        source = self._challenge_for(role, user, server_id)
        if source is None:
            return ["request", user, server_id, self._data()]
        data = None
        if role == "A":
            shown = [k.message.transaction_data for k in self.world.adversary.challenges
                     if k.mid == source and isinstance(k.message, TransactionOptions)]
            data = rng.choice(shown + [self._data()]) if shown else self._data()
        return ["forge", role, user, server_id, source, data]

    def _splice(self, accounts):
        rng = self.rng
        adv = self.world.adversary
        a = rng.choice(adv.assertions)
        c = rng.choice(adv.challenges)
        user, server_id = rng.choice(accounts) if accounts else (USERS[0], SERVERS[0])
        return ["splice", a.mid, c.mid, user, server_id]

    def _compromise(self, accounts):
        user, server_id, role = self.rng.choice(self._compromise_targets())
        return ["compromise", user, server_id, role]

    def _garbage(self, accounts):
        rng = self.rng
        dest = rng.choice(list(self.world.servers) or [SERVERS[0]])
        return ["inject", dest, rng.randbytes(rng.randrange(1, 80)).hex()]


def generate(
    seed: int,
    bounds: Bounds,
    threats: ThreatConfig,
    protocol: Optional[ProtocolConfig] = None,
    record: bool = True,
) -> tuple[Schedule, World]:
    """Draw one schedule against a live world; return it with the world it produced."""
    protocol = replace(protocol or ProtocolConfig(), user_mode=threats.user_mode)
    world = World(seed, protocol, record)
    policy = _Policy(random.Random(f"policy:{seed}"), world, bounds, threats)
    steps = policy.setup()
    for action in steps:
        world.apply(action)
    while len(steps) < bounds.max_steps:
        action = policy.next()
        if action is None:
            break
        steps.append(action)
        world.apply(action)
    return Schedule(seed, steps, bounds, protocol), world


def _mid_slots(action: list) -> list[int]:
    """Argument positions (in `action`) that select a message by id."""
    kinds = OPS[action[0]]
    return [i + 1 for i, kind in enumerate(kinds) if kind.rstrip("?") == "mid" and i + 1 < len(action)]


def _replay_steps(schedule: Schedule, keep: list[int], steps: list) -> Optional[tuple[list, World]]:
    """Re-run a subset of `steps`, re-pointing message references.

    References in `steps` are (step, n) pairs naming the n-th message sent
    while that step ran, so deleting an earlier step does not silently
    retarget a later one. Returns None if a reference no longer exists.
    """
    world = World(schedule.seed, schedule.config, record=False)
    sent: dict[tuple[int, int], int] = {}
    concrete = []
    for i in keep:
        action = list(steps[i])
        for pos in _mid_slots(action):
            ref = action[pos]
            if isinstance(ref, tuple):
                if ref not in sent:
                    return None
                action[pos] = sent[ref]
        concrete.append(action)
        before = len(world.network.history)
        world.apply(action)
        for n, mid in enumerate(range(before, len(world.network.history))):
            sent[(i, n)] = mid
    try:
        validate_schedule(concrete)
    except ScheduleError:
        return None
    return concrete, world


def _violates(world: World, lemma: str, ordered: bool) -> bool:
    return any(v.lemma == lemma and not v.holds for v in check_all(world.trace, ordered))


def shrink(schedule: Schedule, lemma: str, ordered: bool = False) -> Schedule:
    """Greedily delete steps while the lemma stays violated."""
    world = World(schedule.seed, schedule.config, record=False)
    origin: dict[int, tuple[int, int]] = {}
    steps = []
    for i, action in enumerate(schedule.steps):
        abstract = list(action)
        for pos in _mid_slots(abstract):
            if isinstance(abstract[pos], int) and abstract[pos] in origin:
                abstract[pos] = origin[abstract[pos]]
        steps.append(abstract)
        before = len(world.network.history)
        world.apply(action)
        for n, mid in enumerate(range(before, len(world.network.history))):
            origin[mid] = (i, n)
    if not _violates(world, lemma, ordered):
        return schedule
    keep = list(range(len(steps)))
    best = list(schedule.steps)
    changed = True
    while changed:
        changed = False
        for i in reversed(range(len(keep))):
            if i >= len(keep):
                continue
            candidate = keep[:i] + keep[i + 1 :]
            result = _replay_steps(schedule, candidate, steps)
            if result is not None and _violates(result[1], lemma, ordered):
                keep, best = candidate, result[0]
                changed = True
    return replace(schedule, steps=best)


def _one(args) -> tuple:
    index, seed, bounds, threats, protocol, ordered = args
    schedule, world = generate(seed, bounds, threats, protocol, record=False)
    verdicts = check_all(world.trace, ordered)
    labels = [e.label for e in world.trace]
    failed = [(v.lemma, v.counterexample) for v in verdicts if not v.holds]
    steps = schedule.digest()[:16]
    line = f"{index} {seed:016x} {len(schedule.steps)} {steps} {world.trace.digest()[:16]} " + "".join(
        "1" if v.holds else "0" for v in verdicts)
    return index, seed, schedule, failed, labels.count(TRANSACTION_COMPLETE), labels.count(TRANSACTION_BEGIN), line


def explore(
    seed: int,
    bounds: Bounds = Bounds(),
    threats: ThreatConfig = ThreatConfig(),
    runs: int = 10_000,
    protocol: Optional[ProtocolConfig] = None,
    ordered: bool = False,
    max_shrink: int = 2,
    workers: int = 1,
) -> ExploreReport:
    report = ExploreReport(threats, seed, runs)
    jobs = [(i, run_seed(seed, i), bounds, threats, protocol, ordered) for i in range(runs)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            results = list(pool.map(_one, jobs, chunksize=64))
    else:
        results = [_one(job) for job in jobs]
    results.sort(key=lambda r: r[0])
    shrunk = 0
    for index, run_seed_, schedule, failed, completes, begins, line in results:
        report.log.append(line)
        report.completes += completes
        report.begins += begins
        report.steps += len(schedule.steps)
        for lemma, counterexample in failed:
            small = None
            if shrunk < max_shrink:
                small = shrink(schedule, lemma, ordered)
                counterexample = next(v.counterexample for v in check_all(run(small).trace, ordered)
                                      if v.lemma == lemma)
                shrunk += 1
            report.violations.append(Violation(index, run_seed_, lemma, schedule, small, counterexample))
    return report
