"""Executable world: servers, devices, network and attacker driven one
schedule action at a time."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass, field
from typing import Any, Optional

from ..adversary import Adversary, AuthenticChannelViolation, Envelope, Network, NotDerivable
from ..crypto import NonceSource
from ..devices import DeviceA, DeviceB, DeviceError, UserMode, UserModel
from ..messages import (
    MalformedMessage,
    RegistrationResponse,
    Result,
    decode,
    encode,
)
from ..server import Server, ServerConfig, ServerError
from ..trace import NEW_SERVER, Trace, TraceEvent


class ScheduleError(ValueError):
    """The schedule is ill-formed; raised before any step executes."""


@dataclass
class ProtocolConfig:
    user_mode: UserMode = UserMode.COMPARE
    server: ServerConfig = field(default_factory=ServerConfig)
    check_echo: bool = True

    def to_dict(self) -> dict:
        return {
            "user_mode": self.user_mode.value,
            "check_echo": self.check_echo,
            **{f"server.{k}": v for k, v in vars(self.server).items()},
        }


# op -> (positional argument kinds). A trailing "$label" argument is allowed
# on every op and binds the envelope the action produced.
OPS: dict[str, tuple[str, ...]] = {
    "new_server": ("server",),
    "register": ("user", "server"),
    "begin": ("user", "server", "text"),
    "deliver": ("mid",),
    "drop": ("mid",),
    "replay": ("mid", "dest?"),
    "inject": ("dest", "hex", "origin?"),
    "modify": ("mid", "patch"),
    "compromise": ("user", "server", "role"),
    "request": ("user", "server", "text"),
    "forge": ("role", "user", "server", "mid", "text?"),
    "splice": ("mid", "mid", "user", "server"),
    "phish": ("user", "server", "text"),
    "phish_answer": ("mid", "mid?"),
}

SKIPPABLE = (NotDerivable, AuthenticChannelViolation, ServerError, DeviceError, MalformedMessage)


def _split_label(action: list) -> tuple[list, Optional[str]]:
    """Separate a trailing "$label" from the arguments.

    A label is recognised only after every declared argument, so optional
    arguments must be spelled out (as null) when a label follows them.
    """
    args = list(action[1:])
    if len(args) == len(OPS[action[0]]) + 1 and isinstance(args[-1], str) and args[-1].startswith("$"):
        return args[:-1], args[-1]
    return args, None


def validate_schedule(steps: list) -> None:
    """Reject schedules naming unknown ops, servers, users or labels."""
    servers = {a[1] for a in steps if a and a[0] == "new_server" and len(a) > 1}
    users = {a[1] for a in steps if a and a[0] == "register" and len(a) > 1}
    bound = set()
    parsed = []
    for i, action in enumerate(steps):
        if not isinstance(action, (list, tuple)) or not action or action[0] not in OPS:
            raise ScheduleError(f"step {i}: unknown action {action!r}")
        args, label = _split_label(list(action))
        kinds = OPS[action[0]]
        required = [k for k in kinds if not k.endswith("?")]
        if not len(required) <= len(args) <= len(kinds):
            raise ScheduleError(f"step {i}: {action[0]} takes {len(required)}-{len(kinds)} arguments")
        if label is not None:
            bound.add(label)
        parsed.append((i, action[0], args, kinds))
    for i, op, args, kinds in parsed:
        for kind, value in zip(kinds, args):
            if value is None and kind.endswith("?"):
                continue
            kind = kind.rstrip("?")
            if kind == "server" and value not in servers:
                raise ScheduleError(f"step {i}: unknown server {value!r}")
            if kind == "user" and op != "register" and value not in users:
                raise ScheduleError(f"step {i}: unknown user {value!r}")
            if kind == "role" and value not in ("A", "B"):
                raise ScheduleError(f"step {i}: role must be A or B")
            if kind == "mid":
                if isinstance(value, str):
                    if value not in bound:
                        raise ScheduleError(f"step {i}: unbound label {value!r}")
                elif not isinstance(value, int) or isinstance(value, bool) or value < 0:
                    raise ScheduleError(f"step {i}: bad message selector {value!r}")
            if kind == "text" and not isinstance(value, str):
                raise ScheduleError(f"step {i}: transaction text must be a string")


_dumps = json.JSONEncoder(sort_keys=True, separators=(",", ":")).encode


class World:
    def __init__(self, seed: int, config: Optional[ProtocolConfig] = None, record: bool = True):
        self.seed = seed
        self.record = record
        self.config = config or ProtocolConfig()
        self.nonces = NonceSource(random.Random(seed))
        self.trace = Trace()
        if record:
            self.trace.listeners.append(self._log_event)
        self.network = Network()
        self.adversary = Adversary(self.network)
        self.servers: dict[str, Server] = {}
        self.devices: dict[str, tuple[DeviceB, DeviceA]] = {}
        self.labels: dict[str, int] = {}
        self.log: list[str] = []
        self.step = 0
        self._notes: list[str] = []

    # -- bookkeeping ------------------------------------------------------

    def _log_event(self, event: TraceEvent) -> None:
        self.log.append(event.to_json())

    def log_text(self) -> str:
        return "".join(line + "\n" for line in self.log)

    def log_digest(self) -> str:
        return hashlib.sha256(self.log_text().encode()).hexdigest()

    def slots(self) -> list:
        out = []
        for b, a in self.devices.values():
            out.extend(b.slots.values())
            out.extend(a.slots.values())
        return out

    def accounts(self) -> list[tuple[str, str]]:
        return [(u, sid) for sid, s in self.servers.items() for u, acc in s.accounts.items() if acc.active]

    def _resolve(self, ref: Any) -> int:
        if isinstance(ref, str):
            if ref not in self.labels:
                raise NotDerivable(f"label {ref} is unbound")
            return self.labels[ref]
        return ref

    def _user_model(self, user: str) -> UserModel:
        return self.devices[user][0].model

    def _ensure_user(self, user: str) -> tuple[DeviceB, DeviceA]:
        if user not in self.devices:
            model = UserModel(self.config.user_mode)
            b = DeviceB(user, model, self.nonces, self.trace, check_echo=self.config.check_echo)
            a = DeviceA(user, model, self.nonces, self.trace)
            self.devices[user] = (b, a)
        return self.devices[user]

    # -- driving ----------------------------------------------------------

    def apply(self, action: list) -> str:
        self.step += 1
        self.trace.step = self.step
        for server in self.servers.values():
            server.advance(self.step)
        args, label = _split_label(list(action))
        self._notes: list[str] = []
        sent_from = len(self.network.history)
        try:
            produced = getattr(self, "_do_" + action[0])(*args)
            status = "ok"
        except SKIPPABLE as exc:
            produced = None
            status = f"skip: {type(exc).__name__}: {exc}"
        if label is not None and isinstance(produced, Envelope):
            self.labels[label] = produced.mid
        if self.record:
            line = {"step": self.step, "action": list(action), "status": status}
            if self._notes:
                line["server"] = self._notes
            sent = [[e.mid, e.origin, e.dest, hashlib.sha256(e.payload).hexdigest()[:16]]
                    for e in self.network.history[sent_from:]]
            if sent:
                line["sent"] = sent
            self.log.append(_dumps(line))
        self.adversary.observe()
        return status

    def _route(self, origin: str, dest: str, message: Any, authentic: bool = False) -> Envelope:
        queue = not isinstance(message, Result)
        return self.network.send(origin, dest, encode(message), authentic, queue)

    def _do_new_server(self, server_id: str) -> None:
        if server_id in self.servers or server_id in self.adversary.phishers:
            raise NotDerivable(f"server {server_id} exists")
        self.servers[server_id] = Server(server_id, self.nonces, self.trace, self.config.server)
        self.trace.emit(NEW_SERVER, "", server_id)

    def _do_register(self, user: str, server_id: str) -> None:
        """Both registration ceremonies, run without interference.

        Devices are honest during registration; every message is still
        published so the attacker learns usernames and public keys.
        """
        server = self.servers.get(server_id)
        if server is None:
            raise NotDerivable(f"no server {server_id}")
        b, a = self._ensure_user(user)
        addr_b, addr_a = f"{user}/B", f"{user}/A"
        opt = server.begin_registration(user)
        self._route(server_id, addr_b, opt, True)
        pub_b, att_b = b.b_create_credential(opt)
        self._route(addr_b, server_id, RegistrationResponse(user, pub_b, att_b))
        link = server.finish_registration_b(user, pub_b, att_b)
        self._route(server_id, addr_b, link, True)
        link_req = a.a_link(link.value.hex(), server_id)
        self._route(addr_a, server_id, link_req)
        opt_a = server.begin_registration_a(link.value)
        self._route(server_id, addr_a, opt_a, True)
        link_resp = a.a_create_credential(link.value, opt_a)
        self._route(addr_a, server_id, link_resp)
        server.finish_registration_a(link.value, link_resp.public_key, link_resp.assertion)
        self._route(server_id, addr_a, Result(True, "registered"), True)
        for env in self.network.history[-7:]:
            self.network.in_flight.pop(env.mid, None)

    def _do_begin(self, user: str, server_id: str, data: str) -> Envelope:
        b, _ = self._ensure_user(user)
        return self._route(f"{user}/B", server_id, b.initiate(server_id, data))

    def _do_phish(self, user: str, target: str, data: str) -> Envelope:
        b, _ = self._ensure_user(user)
        phisher = self.adversary.phisher_for(target)
        return self._route(f"{user}/B", phisher.fake_id, b.initiate_phished(phisher.fake_id, target, data))

    def _do_deliver(self, ref: Any) -> Optional[Envelope]:
        env = self.network.take(self._resolve(ref))
        outputs: list[Envelope] = []
        if env.dest in self.servers:
            for role, user, msg in self.servers[env.dest].handle(env.payload):
                outputs.append(self._route(env.dest, f"{user}/{role}", msg, True))
                if isinstance(msg, Result):
                    self._notes.append(msg.detail)
        elif env.dest in self.adversary.phishers:
            self.adversary.phishers[env.dest].inbox.append(env.mid)
        else:
            user, _, role = env.dest.rpartition("/")
            if user in self.devices and role in ("A", "B"):
                device = self.devices[user][0 if role == "B" else 1]
                msg = decode(env.payload)
                for dest, reply in device.receive(msg, env.origin, env.authentic):
                    outputs.append(self._route(env.dest, dest, reply))
        queued = [e for e in outputs if e.mid in self.network.in_flight]
        return queued[0] if queued else None

    def _do_drop(self, ref: Any) -> Envelope:
        return self.adversary.drop(self._resolve(ref))

    def _do_replay(self, ref: Any, dest: Optional[str] = None) -> Envelope:
        return self.adversary.replay(self._resolve(ref), dest)

    def _do_inject(self, dest: str, payload_hex: str, origin: Optional[str] = None) -> Envelope:
        try:
            payload = bytes.fromhex(payload_hex)
        except ValueError:
            raise NotDerivable("inject payload is not hex") from None
        return self.adversary.inject(dest, payload, origin or "adversary")

    def _do_modify(self, ref: Any, patch: dict) -> Envelope:
        mid = self._resolve(ref)
        if not isinstance(patch, dict):
            raise NotDerivable("patch must be a mapping")
        if "offset" in patch:
            try:
                data = bytes.fromhex(patch.get("hex", ""))
            except ValueError:
                raise NotDerivable("patch bytes are not hex") from None
            return self.adversary.patch(mid, int(patch["offset"]), data)
        return self.adversary.rewrite(mid, **patch)

    def _do_compromise(self, user: str, server_id: str, role: str) -> None:
        b, a = self._ensure_user(user)
        device = b if role == "B" else a
        self.adversary.receive_leak(device.compromise(server_id))

    def _do_request(self, user: str, server_id: str, data: str) -> Envelope:
        return self.adversary.request(user, server_id, data)

    def _do_forge(self, role: str, user: str, server_id: str, ref: Any, data: Optional[str] = None) -> Envelope:
        return self.adversary.forge_response(role, user, server_id, self._resolve(ref), data)

    def _do_splice(self, assertion_ref: Any, challenge_ref: Any, user: str, server_id: str) -> Envelope:
        return self.adversary.splice(self._resolve(assertion_ref), self._resolve(challenge_ref), user, server_id)

    def _do_phish_answer(self, request_ref: Any, challenge_ref: Any = None) -> Envelope:
        challenge_mid = None if challenge_ref is None else self._resolve(challenge_ref)
        return self.adversary.phish_answer(self._resolve(request_ref), challenge_mid)
