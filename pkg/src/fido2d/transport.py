"""Local stream transport for the honest demo.

Frames are a u32 big-endian length followed by that many bytes. The first
frame on a connection is a hello naming who is speaking: ``B <username>``
for a browser and ``A`` for an additional device, which learns its
username from the registration options the server sends during linking.
Every later frame is one encoded protocol message.

The server side is a single logical state machine; connection threads take
a lock around every call into it.
"""

from __future__ import annotations

import logging
import queue
import random
import socket
import socketserver
import struct
import threading
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

from .crypto import NonceSource
from .devices import DeviceA, DeviceB, UserMode, UserModel
from .messages import (
    LinkNonce,
    Poll,
    RegistrationOptions,
    RegistrationRequest,
    RegistrationResponse,
    Result,
    TransactionOptions,
    decode,
    encode,
)
from .server import Server
from .trace import NEW_SERVER, Trace, TraceEvent

log = logging.getLogger(__name__)

MAX_FRAME = 1 << 20
_LEN = struct.Struct(">I")


class TransportError(ConnectionError):
    pass


def parse_endpoint(text: str) -> tuple[str, int]:
    """``host:port`` or ``:port`` (localhost)."""
    host, sep, port = text.rpartition(":")
    if not sep:
        raise ValueError(f"endpoint {text!r} needs a port")
    return host or "127.0.0.1", int(port)


def write_frame(sock: socket.socket, payload: bytes) -> None:
    if len(payload) > MAX_FRAME:
        raise TransportError("frame too large")
    sock.sendall(_LEN.pack(len(payload)) + payload)


def _read_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise TransportError("connection closed")
        buf += chunk
    return bytes(buf)


def read_frame(sock: socket.socket) -> bytes:
    (length,) = _LEN.unpack(_read_exact(sock, 4))
    if length > MAX_FRAME:
        raise TransportError("frame too large")
    return _read_exact(sock, length)


def event_line(event: TraceEvent) -> str:
    return event.to_json()


# -- server ----------------------------------------------------------------


class _Conn:
    def __init__(self, sock: socket.socket, role: str, user: str):
        self.sock = sock
        self.role = role
        self.user = user
        self.lock = threading.Lock()

    def send(self, payload: bytes) -> None:
        with self.lock:
            write_frame(self.sock, payload)


@dataclass
class ServerHost:
    """Owns the protocol server and routes its replies to connected devices."""

    server: Server
    emit: Callable[[str], None] = print
    lock: threading.Lock = field(default_factory=threading.Lock)
    conns: dict = field(default_factory=dict)
    mailbox: dict = field(default_factory=dict)
    step: int = 0

    def __post_init__(self):
        self.server.trace.listeners.append(lambda e: self.emit(event_line(e)))

    def serve_connection(self, sock: socket.socket) -> None:
        hello = read_frame(sock).decode("utf-8", "replace").split()
        if not hello or hello[0] not in ("A", "B"):
            raise TransportError("bad hello")
        conn = _Conn(sock, hello[0], hello[1] if len(hello) > 1 else "")
        with self.lock:
            if conn.user:
                self._bind(conn)
        try:
            while True:
                payload = read_frame(sock)
                with self.lock:
                    self.step += 1
                    self.server.trace.step = self.step
                    self.server.advance(self.step)
                    replies = self.server.handle(payload)
                    for role, user, msg in replies:
                        self._route(conn, role, user, encode(msg))
        finally:
            with self.lock:
                if self.conns.get((conn.role, conn.user)) is conn:
                    del self.conns[(conn.role, conn.user)]

    def _bind(self, conn: _Conn) -> None:
        self.conns[(conn.role, conn.user)] = conn
        for payload in self.mailbox.pop((conn.role, conn.user), []):
            conn.send(payload)

    def _route(self, conn: _Conn, role: str, user: str, payload: bytes) -> None:
        if conn.role == role and not conn.user:
            conn.user = user
            self._bind(conn)
        target = conn if (conn.role, conn.user) == (role, user) else self.conns.get((role, user))
        if target is not None:
            target.send(payload)
        elif role == "B":
            # device A fetches its options by polling; B gets results later
            self.mailbox.setdefault((role, user), []).append(payload)


def start_server(endpoint: str, server_id: str, seed: int, emit: Callable[[str], None] = print):
    """Listen on `endpoint` in a background thread; return (tcp_server, host)."""
    host = ServerHost(Server(server_id, NonceSource(random.Random(seed)), Trace()), emit)
    host.server.trace.emit(NEW_SERVER, "", server_id)

    class Handler(socketserver.BaseRequestHandler):
        def handle(self):
            try:
                host.serve_connection(self.request)
            except (TransportError, OSError) as exc:
                log.debug("connection ended: %s", exc)

    class TCP(socketserver.ThreadingTCPServer):
        allow_reuse_address = True
        daemon_threads = True

    tcp = TCP(parse_endpoint(endpoint), Handler)
    threading.Thread(target=tcp.serve_forever, daemon=True).start()
    return tcp, host


# -- devices ---------------------------------------------------------------


class Link:
    """A device's connection to one server."""

    def __init__(self, endpoint: str, hello: str, timeout: Optional[float] = 10.0):
        self.sock = socket.create_connection(parse_endpoint(endpoint), timeout=10.0)
        self.sock.settimeout(timeout)
        write_frame(self.sock, hello.encode())

    def send(self, msg: Any) -> None:
        write_frame(self.sock, encode(msg))

    def recv(self) -> Any:
        return decode(read_frame(self.sock))

    def close(self) -> None:
        self.sock.close()


class PromptUser(UserModel):
    """A human at a terminal: every displayed transaction is put to them."""

    def __init__(self, ask: Callable[[str], bool]):
        super().__init__(UserMode.COMPARE)
        self.ask = ask

    def confirms(self, server_id: str, data: str) -> bool:
        return self.ask(f"confirm on {server_id}: {data!r}?")


def _expect(link: Link, kind: type) -> Any:
    msg = link.recv()
    if isinstance(msg, Result) and not msg.ok:
        raise TransportError(msg.detail)
    if not isinstance(msg, kind):
        raise TransportError(f"expected {kind.__name__}, got {type(msg).__name__}")
    return msg


def run_device_b(
    endpoint: str,
    server_id: str,
    user: str,
    transactions: Callable[[], Optional[str]],
    ask: Callable[[str], bool],
    on_link: Callable[[str], None],
    seed: int,
    out: Callable[[str], None] = print,
    timeout: Optional[float] = 10.0,
    trace: Optional[Trace] = None,
) -> list[str]:
    """Register, hand the link code to device A, then run transactions.

    `transactions` returns the next transaction text or None to stop.
    Returns the server's result lines. Begin events go to `trace`.
    """
    device = DeviceB(user, UserModel(), NonceSource(random.Random(seed)), trace)
    link = Link(endpoint, f"B {user}", timeout)
    results = []
    try:
        link.send(RegistrationRequest(user))
        opt = _expect(link, RegistrationOptions)
        if opt.server_id != server_id:
            raise TransportError(f"server calls itself {opt.server_id!r}")
        pub, att = device.b_create_credential(opt, ask(f"register {user} at {server_id}?"))
        link.send(RegistrationResponse(user, pub, att))
        code = _expect(link, LinkNonce).value.hex()
        out(f"link code for device A: {code}")
        on_link(code)
        _expect(link, Result)  # device A finished linking
        while (data := transactions()) is not None:
            link.send(device.initiate(server_id, data))
            challenge = link.recv()
            if isinstance(challenge, Result):
                results.append(challenge.detail)
                out(f"server: {challenge.detail}")
                continue
            if not ask(f"sign in for {data!r} at {server_id}?"):
                out("declined on device B")
                continue
            for _, reply in device.receive(challenge, server_id, True):
                link.send(reply)
            while True:
                result = link.recv()
                if not isinstance(result, Result):
                    continue
                out(f"server: {result.detail}")
                if result.detail != "awaiting device A":
                    results.append(result.detail)
                    break
    finally:
        link.close()
    return results


def run_device_a(
    endpoint: str,
    server_id: str,
    link_code: str,
    ask: Callable[[str], bool],
    seed: int,
    stop: Callable[[], bool],
    poll_interval: float = 0.05,
    out: Callable[[str], None] = print,
) -> list[str]:
    """Link to the account behind `link_code`, then poll and confirm.

    Returns the transaction texts that were shown.
    """
    device = DeviceA("", PromptUser(ask), NonceSource(random.Random(seed)))
    link = Link(endpoint, "A")
    shown: list[str] = []
    handled: set[bytes] = set()
    try:
        request = device.a_link(link_code, server_id, ask(f"link this device to {server_id}?"))
        link.send(request)
        opt = _expect(link, RegistrationOptions)
        device.user = opt.username
        link.send(device.a_create_credential(request.nonce, opt))
        _expect(link, Result)
        out(f"linked to {opt.username} at {server_id}")
        inbox: queue.Queue = queue.Queue()
        link.sock.settimeout(None)
        threading.Thread(target=_pump, args=(link, inbox), daemon=True).start()
        while not stop():
            link.send(Poll(device.user))
            deadline = time.monotonic() + poll_interval
            while (left := deadline - time.monotonic()) > 0:
                try:
                    msg = inbox.get(timeout=left)
                except queue.Empty:
                    break
                if msg is None:
                    return shown
                if isinstance(msg, TransactionOptions) and msg.challenge not in handled:
                    handled.add(msg.challenge)
                    out(f"device A shows: {msg.transaction_data}")
                    shown.append(msg.transaction_data)
                    for _, reply in device.receive(msg, server_id, True):
                        link.send(reply)
    finally:
        link.close()
    return shown


def _pump(link: Link, inbox: queue.Queue) -> None:
    try:
        while True:
            inbox.put(link.recv())
    except (TransportError, OSError, ValueError):
        inbox.put(None)
