"""Stream transports carrying protocol frames: TCP and an in-process loopback."""

from __future__ import annotations

import queue
import socket
import threading

from ..errors import ProtocolError, UsageError
from .protocol import MAX_FRAME, Message, _LEN, decode_payload, encode


class ConnectionClosed(ProtocolError):
    pass


def parse_endpoint(endpoint: str) -> tuple[str, int]:
    host, sep, port = endpoint.rpartition(":")
    if not sep or not host or not port.isdigit():
        raise UsageError(f"endpoint must be host:port, got {endpoint!r}")
    return host.strip("[]"), int(port)


class TcpConnection:
    def __init__(self, sock: socket.socket, name: str = ""):
        self.sock = sock
        self.name = name or "%s:%s" % sock.getpeername()[:2]
        self._send_lock = threading.Lock()

    def send(self, msg: Message):
        data = encode(msg)
        with self._send_lock:
            try:
                self.sock.sendall(data)
            except OSError as e:
                raise ConnectionClosed(f"{self.name}: send failed: {e}") from None

    def _read_exact(self, n: int) -> bytes:
        chunks = []
        while n:
            chunk = self.sock.recv(min(n, 1 << 20))
            if not chunk:
                raise ConnectionClosed(f"{self.name}: connection closed")
            chunks.append(chunk)
            n -= len(chunk)
        return b"".join(chunks)

    def recv(self, timeout: float | None = None) -> Message:
        """Block for one frame; raises ``TimeoutError`` after ``timeout`` seconds."""
        self.sock.settimeout(timeout)
        try:
            (n,) = _LEN.unpack(self._read_exact(_LEN.size))
            if n > MAX_FRAME:
                raise ProtocolError(f"{self.name}: frame of {n} bytes exceeds limit")
            return decode_payload(self._read_exact(n))
        except socket.timeout:
            raise TimeoutError(f"{self.name}: no frame within {timeout} s") from None
        except OSError as e:
            raise ConnectionClosed(f"{self.name}: {e}") from None

    def close(self):
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class LoopbackConnection:
    """One end of an in-process pipe. Frames are encoded and decoded like on TCP."""

    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, name: str):
        self._in = inbox
        self._out = outbox
        self.name = name
        self.closed = False

    def send(self, msg: Message):
        if self.closed:
            raise ConnectionClosed(f"{self.name}: closed")
        self._out.put(encode(msg))

    def recv(self, timeout: float | None = None) -> Message:
        try:
            frame = self._in.get(timeout=timeout)
        except queue.Empty:
            raise TimeoutError(f"{self.name}: no frame within {timeout} s") from None
        if frame is None:
            raise ConnectionClosed(f"{self.name}: peer closed")
        (n,) = _LEN.unpack_from(frame)
        return decode_payload(frame[_LEN.size : _LEN.size + n])

    def close(self):
        if not self.closed:
            self.closed = True
            self._out.put(None)
            self._in.put(None)  # wakes a reader blocked on this end


def loopback_pair(name: str = "loopback") -> tuple[LoopbackConnection, LoopbackConnection]:
    a, b = queue.Queue(), queue.Queue()
    return LoopbackConnection(a, b, name), LoopbackConnection(b, a, name)


def connect(endpoint: str, timeout: float = 30.0) -> TcpConnection:
    host, port = parse_endpoint(endpoint)
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except OSError as e:
        raise ProtocolError(f"cannot connect to worker {endpoint}: {e}") from None
    sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
    return TcpConnection(sock, endpoint)
