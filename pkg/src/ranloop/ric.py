"""Near-real-time RIC: node registry (NIB), subscriptions, frame routing.

``RicCore`` is transport-agnostic and single-dispatch: every inbound
frame goes through ``on_frame`` under one lock, which serializes
routing and gives per-destination FIFO delivery for free. Two front
ends drive it:

* ``RicServer``: stream-socket service, one reader thread per
  connection (free-running mode).
* ``LocalHub``: in-memory connections pumped explicitly by the
  lockstep orchestrator (deterministic mode).

Nodes register with an XAppRegister frame addressed to "ric" whose
payload is ``kind[;capabilities]`` with kind in {e2_node, xapp}; the
RIC answers on the same message type with "ok" or "err;<reason>".
xApps subscribe with payload ``bs_id;period_ms``; on success the E2
node is informed of the report period via a forwarded
SubscriptionRequest carrying ``xapp_id;period_ms``. A XAppRoute frame
addressed to "ric" with payload "stats" returns the plaintext stats
dump (admin command).
"""

from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass

from .e2_wire import (
    E2Frame,
    MessageType,
    StreamDecoder,
    encode_frame,
)
from .transport import LocalTransport

log = logging.getLogger(__name__)

RIC_ID = "ric"

NODE_KINDS = ("e2_node", "xapp")

_ROUTABLE = (
    MessageType.Indication,
    MessageType.Control,
    MessageType.ControlAck,
    MessageType.XAppRoute,
)


@dataclass
class NibEntry:
    node_id: str
    node_kind: str
    connected_since_ms: int
    capabilities: str = ""


@dataclass(frozen=True)
class Subscription:
    xapp_id: str
    bs_id: str
    report_period_ms: int


class RicCore:
    """Registry and router; all mutation happens under one lock."""

    def __init__(self, clock=None):
        self._clock = clock if clock is not None else lambda: int(time.time() * 1000)
        self._lock = threading.RLock()
        self._next_conn = 0
        self._send: dict[int, callable] = {}
        self._node_of_conn: dict[int, str] = {}
        self._conn_of_node: dict[str, int] = {}
        self.nib: dict[str, NibEntry] = {}
        self.subscriptions: dict[tuple[str, str], Subscription] = {}
        self.accepted = 0
        self.delivered = 0
        self.dropped = 0
        self.drops_by_dest: dict[str, int] = {}
        self.rejected_registrations = 0

    # -- connection lifecycle ------------------------------------------------

    def attach(self, send_fn) -> int:
        with self._lock:
            conn_id = self._next_conn
            self._next_conn += 1
            self._send[conn_id] = send_fn
            return conn_id

    def detach(self, conn_id: int) -> None:
        with self._lock:
            self._send.pop(conn_id, None)
            node_id = self._node_of_conn.pop(conn_id, None)
            if node_id is not None:
                self._conn_of_node.pop(node_id, None)
                self.nib.pop(node_id, None)
                stale = [
                    key
                    for key, sub in self.subscriptions.items()
                    if node_id in (sub.xapp_id, sub.bs_id)
                ]
                for key in stale:
                    del self.subscriptions[key]

    # -- queries ---------------------------------------------------------------

    def query_nib(self, kind: str | None = None) -> list[NibEntry]:
        with self._lock:
            entries = [
                e for e in self.nib.values() if kind is None or e.node_kind == kind
            ]
            return sorted(entries, key=lambda e: e.node_id)

    def stats(self) -> dict:
        with self._lock:
            return {
                "accepted": self.accepted,
                "delivered": self.delivered,
                "dropped": self.dropped,
                "drops_by_dest": dict(self.drops_by_dest),
                "rejected_registrations": self.rejected_registrations,
                "nodes": len(self.nib),
                "subscriptions": len(self.subscriptions),
            }

    def stats_text(self) -> str:
        with self._lock:
            lines = [
                f"accepted {self.accepted}",
                f"delivered {self.delivered}",
                f"dropped {self.dropped}",
                f"rejected_registrations {self.rejected_registrations}",
            ]
            for entry in self.query_nib():
                lines.append(
                    f"node {entry.node_id} {entry.node_kind} "
                    f"since={entry.connected_since_ms} caps={entry.capabilities}"
                )
            for sub in sorted(self.subscriptions.values(), key=lambda s: (s.xapp_id, s.bs_id)):
                lines.append(
                    f"subscription {sub.xapp_id} -> {sub.bs_id} @{sub.report_period_ms}ms"
                )
            return "\n".join(lines)

    # -- frame handling ----------------------------------------------------------

    def on_frame(self, conn_id: int, frame: E2Frame) -> None:
        with self._lock:
            if frame.msg_type == MessageType.XAppRegister:
                self._handle_register(conn_id, frame)
                return
            node_id = self._node_of_conn.get(conn_id)
            if node_id is None:
                # only registration is allowed on an anonymous connection
                self.dropped += 1
                self._bump_drop("<unregistered>")
                return
            if frame.msg_type == MessageType.SubscriptionRequest:
                self._handle_subscription(conn_id, node_id, frame)
            elif frame.msg_type in _ROUTABLE:
                if (
                    frame.msg_type == MessageType.XAppRoute
                    and frame.dest_id == RIC_ID
                ):
                    self._handle_admin(conn_id, node_id, frame)
                else:
                    self._route(frame)
            else:
                log.debug("ignoring frame type %s from %s", frame.msg_type, node_id)

    def _reply(self, conn_id: int, frame: E2Frame) -> None:
        send_fn = self._send.get(conn_id)
        if send_fn is not None:
            try:
                send_fn(encode_frame(frame))
            except OSError:
                log.debug("reply to conn %d failed", conn_id)

    def _handle_register(self, conn_id: int, frame: E2Frame) -> None:
        node_id = frame.source_id
        parts = frame.text().split(";", 1)
        kind = parts[0]
        capabilities = parts[1] if len(parts) > 1 else ""

        def nack(reason: str) -> None:
            self.rejected_registrations += 1
            self._reply(
                conn_id,
                E2Frame(
                    MessageType.XAppRegister, RIC_ID, node_id, reason.encode("utf-8")
                ),
            )

        if not node_id or kind not in NODE_KINDS:
            nack("err;malformed")
            return
        if conn_id in self._node_of_conn:
            nack("err;already-registered")
            return
        if node_id in self.nib:
            nack("err;duplicate-id")
            return
        self.nib[node_id] = NibEntry(
            node_id=node_id,
            node_kind=kind,
            connected_since_ms=int(self._clock()),
            capabilities=capabilities,
        )
        self._node_of_conn[conn_id] = node_id
        self._conn_of_node[node_id] = conn_id
        self._reply(
            conn_id, E2Frame(MessageType.XAppRegister, RIC_ID, node_id, b"ok")
        )

    def _handle_subscription(self, conn_id: int, node_id: str, frame: E2Frame) -> None:
        def respond(payload: str) -> None:
            self._reply(
                conn_id,
                E2Frame(
                    MessageType.SubscriptionResponse,
                    RIC_ID,
                    node_id,
                    payload.encode("utf-8"),
                ),
            )

        entry = self.nib.get(node_id)
        if entry is None or entry.node_kind != "xapp":
            respond("err;not-an-xapp")
            return
        bs_id, sep, period_s = frame.text().partition(";")
        if not sep:
            respond("err;malformed")
            return
        try:
            period_ms = int(period_s)
        except ValueError:
            respond("err;bad-period")
            return
        if period_ms <= 0:
            respond("err;bad-period")
            return
        target = self.nib.get(bs_id)
        if target is None or target.node_kind != "e2_node":
            respond(f"err;unknown-bs;{bs_id}")
            return

        # idempotent: re-subscribing the same pair replaces the entry
        self.subscriptions[(node_id, bs_id)] = Subscription(node_id, bs_id, period_ms)
        respond(f"ok;{bs_id};{period_ms}")
        bs_conn = self._conn_of_node.get(bs_id)
        if bs_conn is not None:
            self._reply(
                bs_conn,
                E2Frame(
                    MessageType.SubscriptionRequest,
                    node_id,
                    bs_id,
                    f"{node_id};{period_ms}".encode("utf-8"),
                ),
            )

    def _handle_admin(self, conn_id: int, node_id: str, frame: E2Frame) -> None:
        if frame.text() == "stats":
            self._reply(
                conn_id,
                E2Frame(
                    MessageType.XAppRoute,
                    RIC_ID,
                    node_id,
                    self.stats_text().encode("utf-8"),
                ),
            )

    def _route(self, frame: E2Frame) -> None:
        self.accepted += 1
        dest = frame.dest_id
        if frame.msg_type == MessageType.XAppRoute:
            entry = self.nib.get(dest)
            if entry is None or entry.node_kind != "xapp":
                self.dropped += 1
                self._bump_drop(dest)
                return
        conn_id = self._conn_of_node.get(dest)
        send_fn = self._send.get(conn_id) if conn_id is not None else None
        if send_fn is None:
            self.dropped += 1
            self._bump_drop(dest)
            return
        try:
            send_fn(encode_frame(frame))
        except OSError:
            self.dropped += 1
            self._bump_drop(dest)
            return
        self.delivered += 1

    def _bump_drop(self, dest: str) -> None:
        self.drops_by_dest[dest] = self.drops_by_dest.get(dest, 0) + 1


# ---------------------------------------------------------------------------
# lockstep hub
# ---------------------------------------------------------------------------


class LocalHub:
    """Deterministic in-memory front end: clients enqueue encoded frames,
    ``pump`` feeds them to the core in attach order, FIFO per client."""

    def __init__(self, core: RicCore | None = None, clock=None):
        self.core = core if core is not None else RicCore(clock=clock)
        self._clients: list[LocalTransport] = []
        self._decoders: dict[int, StreamDecoder] = {}

    def connect(self) -> LocalTransport:
        holder: list[LocalTransport] = []

        def deliver(data: bytes) -> None:
            holder[0]._deliver(data)

        conn_id = self.core.attach(deliver)
        client = LocalTransport(self, conn_id)
        holder.append(client)
        self._clients.append(client)
        self._decoders[conn_id] = StreamDecoder()
        return client

    def _detach(self, client: LocalTransport) -> None:
        self.core.detach(client.conn_id)
        if client in self._clients:
            self._clients.remove(client)
        self._decoders.pop(client.conn_id, None)

    def pump(self) -> int:
        """Dispatch all pending client frames; returns how many were handled."""
        handled = 0
        while True:
            moved = 0
            for client in list(self._clients):
                chunks = client._drain_outbox()
                if not chunks:
                    continue
                decoder = self._decoders[client.conn_id]
                for chunk in chunks:
                    for frame in decoder.feed(chunk):
                        self.core.on_frame(client.conn_id, frame)
                        moved += 1
            handled += moved
            if moved == 0:
                return handled


# ---------------------------------------------------------------------------
# socket server
# ---------------------------------------------------------------------------


class RicServer:
    """Stream-socket front end for RicCore (free-running mode)."""

    def __init__(self, host: str = "127.0.0.1", port: int = 0, core: RicCore | None = None):
        self.core = core if core is not None else RicCore()
        self._host = host
        self._port = port
        self._listener: socket.socket | None = None
        self._threads: list[threading.Thread] = []
        self._conns: list[socket.socket] = []
        self._conn_lock = threading.Lock()
        self._stopping = threading.Event()

    @property
    def address(self) -> tuple[str, int]:
        assert self._listener is not None, "server not started"
        return self._listener.getsockname()[:2]

    def start(self) -> "RicServer":
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind((self._host, self._port))
        listener.listen(32)
        self._listener = listener
        accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        accept_thread.start()
        self._threads.append(accept_thread)
        log.info("RIC listening on %s:%d", *self.address)
        return self

    def stop(self) -> None:
        self._stopping.set()
        if self._listener is not None:
            try:
                self._listener.close()
            except OSError:
                pass
        with self._conn_lock:
            conns = list(self._conns)
        for conn in conns:
            try:
                conn.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            conn.close()
        for thread in self._threads:
            thread.join(timeout=2.0)

    def _accept_loop(self) -> None:
        while not self._stopping.is_set():
            try:
                conn, _addr = self._listener.accept()
            except OSError:
                return
            with self._conn_lock:
                self._conns.append(conn)
            thread = threading.Thread(
                target=self._serve_conn, args=(conn,), daemon=True
            )
            thread.start()
            self._threads.append(thread)

    def _serve_conn(self, conn: socket.socket) -> None:
        write_lock = threading.Lock()

        def send_fn(data: bytes) -> None:
            with write_lock:
                conn.sendall(data)

        conn_id = self.core.attach(send_fn)
        decoder = StreamDecoder()
        try:
            while True:
                data = conn.recv(65536)
                if not data:
                    break
                for frame in decoder.feed(data):
                    self.core.on_frame(conn_id, frame)
        except OSError:
            pass
        finally:
            self.core.detach(conn_id)
            with self._conn_lock:
                if conn in self._conns:
                    self._conns.remove(conn)
            conn.close()
