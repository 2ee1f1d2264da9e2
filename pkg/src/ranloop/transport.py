"""Frame transports: TCP socket client and in-memory lockstep pipe.

Both expose the same surface to agents and xApps:

    send(frame)          encode and ship one E2 frame
    poll() -> [frames]   drain everything received so far
    close()

``SocketTransport`` runs a background reader thread feeding a queue, so
``poll`` never blocks. ``LocalTransport`` is created by the lockstep
hub (see ric.LocalHub); its delivery order is fully deterministic.
"""

from __future__ import annotations

import queue
import socket
import threading

from .e2_wire import E2Frame, StreamDecoder, encode_frame


class TransportClosed(OSError):
    """The peer is gone; send/poll cannot proceed."""


class LocalTransport:
    """One endpoint of an in-memory frame pipe (lockstep mode)."""

    def __init__(self, hub, conn_id: int):
        self._hub = hub
        self.conn_id = conn_id
        self._inbox = bytearray()  # bytes delivered by the hub
        self._outbox: list[bytes] = []  # bytes awaiting hub.pump()
        self._decoder = StreamDecoder()
        self.closed = False

    def send(self, frame: E2Frame) -> None:
        if self.closed:
            raise TransportClosed("local transport closed")
        self._outbox.append(encode_frame(frame))

    def poll(self) -> list[E2Frame]:
        if self.closed:
            raise TransportClosed("local transport closed")
        if not self._inbox:
            return []
        data = bytes(self._inbox)
        self._inbox.clear()
        return self._decoder.feed(data)

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._hub._detach(self)

    # hub side
    def _deliver(self, data: bytes) -> None:
        self._inbox.extend(data)

    def _drain_outbox(self) -> list[bytes]:
        out = self._outbox
        self._outbox = []
        return out


class SocketTransport:
    """TCP client speaking length-prefixed E2 frames."""

    def __init__(self, host: str, port: int, connect_timeout: float = 5.0):
        self.host = host
        self.port = port
        self._connect_timeout = connect_timeout
        self._sock: socket.socket | None = None
        self._send_lock = threading.Lock()
        self._frames: queue.Queue = queue.Queue()
        self._reader: threading.Thread | None = None
        self._closed = threading.Event()
        self.connect()

    def connect(self) -> None:
        sock = socket.create_connection(
            (self.host, self.port), timeout=self._connect_timeout
        )
        # reject TCP self-connects (loopback reconnects to a dead ephemeral
        # port can land on the same source port and "succeed")
        if sock.getsockname() == sock.getpeername():
            sock.close()
            raise ConnectionRefusedError("self-connected socket rejected")
        sock.settimeout(None)
        self._sock = sock
        self._closed.clear()
        self._reader = threading.Thread(target=self._read_loop, daemon=True)
        self._reader.start()

    def reconnect(self) -> None:
        self._teardown()
        self.connect()

    def send(self, frame: E2Frame) -> None:
        sock = self._sock
        if sock is None or self._closed.is_set():
            raise TransportClosed("socket transport closed")
        data = encode_frame(frame)
        try:
            with self._send_lock:
                sock.sendall(data)
        except OSError as exc:
            self._closed.set()
            raise TransportClosed(str(exc)) from exc

    def poll(self, timeout: float = 0.0) -> list[E2Frame]:
        frames = []
        try:
            frames.append(self._frames.get(timeout=timeout) if timeout else self._frames.get_nowait())
        except queue.Empty:
            if self._closed.is_set():
                raise TransportClosed("socket transport closed") from None
            return frames
        while True:
            try:
                frames.append(self._frames.get_nowait())
            except queue.Empty:
                return frames

    def wait_for(self, predicate, timeout: float = 5.0) -> E2Frame | None:
        """Take frames one at a time until one matches; frames that do not
        match are dropped, so use this only for handshake phases or when
        every inbound frame is of the awaited kind."""
        import time

        deadline = time.monotonic() + timeout
        while time.monotonic() < deadline:
            try:
                frame = self._frames.get(timeout=0.05)
            except queue.Empty:
                if self._closed.is_set():
                    return None
                continue
            if predicate(frame):
                return frame
        return None

    def close(self) -> None:
        self._closed.set()
        self._teardown()

    def _teardown(self) -> None:
        sock, self._sock = self._sock, None
        if sock is not None:
            try:
                sock.shutdown(socket.SHUT_RDWR)
            except OSError:
                pass
            sock.close()

    def _read_loop(self) -> None:
        decoder = StreamDecoder()
        sock = self._sock
        try:
            while sock is not None:
                data = sock.recv(65536)
                if not data:
                    break
                for frame in decoder.feed(data):
                    self._frames.put(frame)
        except OSError:
            pass
        finally:
            self._closed.set()
