"""Worker side of the protocol: trains its partition once per round."""

from __future__ import annotations

import logging
import socket
import struct
import threading

import numpy as np

from ..cipher import HEContext, ct_deserialize, ct_serialize
from ..config import parse_config
from ..data import dataset_deserialize
from ..errors import HEError, ProtocolError
from ..henn.encrypted import RoundRecord, train_round
from ..modelio import model_deserialize, model_serialize
from .protocol import Message, MsgType, pack_blobs, parse_assign, unpack_blobs
from .transport import ConnectionClosed, TcpConnection, parse_endpoint

log = logging.getLogger(__name__)


def round_done_body(model_bytes: bytes, rec: RoundRecord) -> bytes:
    """``u32 iterations, u32 n_batches`` then blobs: model, batch sizes, one loss per batch."""
    sizes = np.asarray(rec.batch_sizes, dtype="<u4").tobytes()
    losses = [ct_serialize(c) for c in rec.batch_losses]
    return struct.pack("<II", rec.iterations, len(losses)) + pack_blobs(model_bytes, sizes, *losses)


def parse_round_done(body: bytes, ctx: HEContext, round_index: int):
    if len(body) < 8:
        raise ProtocolError("ROUND_DONE body too short")
    iterations, n = struct.unpack_from("<II", body)
    blobs = unpack_blobs(body, 2 + n, 8)
    sizes = np.frombuffer(blobs[1], dtype="<u4")
    if len(sizes) != n:
        raise ProtocolError(f"ROUND_DONE carries {len(sizes)} batch sizes for {n} losses")
    rec = RoundRecord(round_index, iterations, [ct_deserialize(b, ctx) for b in blobs[2:]],
                      [int(s) for s in sizes])
    return model_deserialize(blobs[0], ctx), rec


class WorkerSession:
    """Drives one master connection until FINISH or an error.

    After ASSIGN the worker trains round 1 and replies ROUND_DONE(1). Each
    AGGREGATED(t) replaces the local model; if ``t < T`` round ``t+1`` follows.
    """

    def __init__(self, conn, name: str = "worker"):
        self.conn = conn
        self.name = name
        self.cfg = None
        self.ctx = None
        self.model = None
        self.data = None
        self.index = 0
        self.count = 0
        self.round = 0
        self.iterations = 0
        self.finished = False

    def _train_next(self):
        cfg = self.cfg
        t = self.round + 1
        rec = RoundRecord(t, self.iterations)
        m = self.model
        for e in range(cfg.local_epochs):
            m, r = train_round(m, self.data, cfg.local_batch_size, cfg.lr, cfg.shuffle_seed,
                               (t - 1) * cfg.local_epochs + e + 1, rec.iterations)
            rec.iterations = r.iterations
            rec.batch_losses += r.batch_losses
            rec.batch_sizes += r.batch_sizes
        self.model, self.round, self.iterations = m, t, rec.iterations
        self.conn.send(Message(MsgType.ROUND_DONE, t, round_done_body(model_serialize(m), rec)))

    def _on_assign(self, msg: Message):
        if self.cfg is not None:
            raise ProtocolError("duplicate ASSIGN")
        index, count, cfg_text, model_bytes, part_bytes = parse_assign(msg.body)
        cfg = parse_config(cfg_text)
        if not 1 <= index <= count or count != cfg.workers:
            raise ProtocolError(f"bad worker index {index}/{count} for {cfg.workers} workers")
        self.ctx = HEContext(cfg.he, noise_seed=cfg.noise_seed + index - 1)
        self.model = model_deserialize(model_bytes, self.ctx)
        self.data = dataset_deserialize(part_bytes, self.ctx)
        self.cfg, self.index, self.count = cfg, index, count
        log.info("%s: assigned %d/%d, %d samples, %d rounds", self.name, index, count, len(self.data), cfg.rounds)
        if cfg.rounds >= 1:
            self._train_next()

    def _on_aggregated(self, msg: Message):
        if self.cfg is None:
            raise ProtocolError("AGGREGATED before ASSIGN")
        if msg.round != self.round:
            raise ProtocolError(f"stale AGGREGATED for round {msg.round}, expected {self.round}")
        self.model = model_deserialize(msg.body, self.ctx)
        if self.round < self.cfg.rounds:
            self._train_next()

    def handle(self, msg: Message):
        if msg.type == MsgType.HELLO:
            self.conn.send(Message(MsgType.HELLO, 0, b"worker"))
        elif msg.type == MsgType.ASSIGN:
            self._on_assign(msg)
        elif msg.type == MsgType.AGGREGATED:
            self._on_aggregated(msg)
        elif msg.type == MsgType.FINISH:
            self.finished = True
        elif msg.type == MsgType.ERROR:
            raise ProtocolError(f"master reported error: {msg.text}")
        else:
            raise ProtocolError(f"unexpected {msg.type.name} from master")

    def serve(self, timeout: float | None = None) -> bool:
        """Run to completion. True if the session ended with FINISH."""
        try:
            while not self.finished:
                self.handle(self.conn.recv(timeout))
        except ConnectionClosed as e:
            log.warning("%s: %s", self.name, e)
        except (HEError, TimeoutError) as e:
            log.warning("%s: closing session: %s", self.name, e)
            try:
                self.conn.send(Message(MsgType.ERROR, self.round, str(e).encode("utf-8")))
            except ConnectionClosed:
                pass
        finally:
            self.conn.close()
        return self.finished


def _refuse(sock: socket.socket):
    conn = TcpConnection(sock, "refused")
    try:
        conn.send(Message(MsgType.ERROR, 0, b"busy: worker already serving a master"))
    except ConnectionClosed:
        pass
    conn.close()


def worker_run(listen_endpoint: str, ready=None, max_sessions: int | None = None) -> int:
    """Serve masters on ``host:port`` one at a time, returning after a FINISH.

    A connection arriving while a session is active gets an ERROR and is
    closed. ``ready(host, port)`` is called once the socket is bound (handy
    with port 0). Returns the number of sessions served.
    """
    host, port = parse_endpoint(listen_endpoint)
    srv = socket.create_server((host, port))
    srv.settimeout(0.2)
    bound = srv.getsockname()[:2]
    if ready is not None:
        ready(*bound)
    done = threading.Event()
    active: list[threading.Thread] = []
    served = 0

    def run(sock):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        if WorkerSession(TcpConnection(sock)).serve():
            done.set()

    try:
        while not done.is_set():
            if max_sessions is not None and served >= max_sessions and not any(t.is_alive() for t in active):
                break
            try:
                sock, _ = srv.accept()
            except socket.timeout:
                continue
            if any(t.is_alive() for t in active) or (max_sessions is not None and served >= max_sessions):
                _refuse(sock)
                continue
            active = [threading.Thread(target=run, args=(sock,), daemon=True)]
            active[0].start()
            served += 1
        for t in active:
            t.join()
    finally:
        srv.close()
    return served
