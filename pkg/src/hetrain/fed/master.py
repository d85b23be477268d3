"""Master side: partition, distribute, collect, aggregate, repeat."""

from __future__ import annotations

import logging
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

from ..config import TrainConfig
from ..data import EncryptedDataset, dataset_serialize
from ..errors import DataError, HEError, ProtocolError, WorkerTimeoutError
from ..henn.encrypted import RoundRecord
from ..henn.model import EncryptedModel
from ..modelio import model_serialize
from .aggregate import fedavg, partition
from .protocol import Message, MsgType, assign_body
from .transport import ConnectionClosed, connect, loopback_pair
from .worker import WorkerSession, parse_round_done

log = logging.getLogger(__name__)


def _expect(conn, kind: MsgType, round_index: int, deadline: float) -> Message:
    remaining = deadline - time.monotonic()
    if remaining <= 0:
        raise TimeoutError
    msg = conn.recv(remaining)
    if msg.type == MsgType.ERROR:
        raise ProtocolError(f"worker {conn.name} reported error: {msg.text}")
    if msg.type != kind:
        raise ProtocolError(f"worker {conn.name}: expected {kind.name}, got {msg.type.name}")
    if msg.round != round_index:
        raise ProtocolError(f"worker {conn.name}: {kind.name} for round {msg.round}, expected {round_index}")
    return msg


def _gather(pool, conns, kind: MsgType, round_index: int, budget: float) -> list[Message]:
    """Receive one ``kind`` message from every worker concurrently."""
    deadline = time.monotonic() + budget
    futures = [pool.submit(_expect, c, kind, round_index, deadline) for c in conns]
    out = []
    for c, f in zip(conns, futures):
        try:
            out.append(f.result())
        except TimeoutError:
            raise WorkerTimeoutError(c.name, budget) from None
    return out


def _broadcast(conns, msg: Message):
    for c in conns:
        c.send(msg)


def master_run(cfg: TrainConfig, model: EncryptedModel, dataset: EncryptedDataset, conns: Sequence,
               probe: Callable | None = None) -> tuple[EncryptedModel, list[RoundRecord]]:
    """Run ``cfg.rounds`` synchronous FedAvg rounds over already-open connections.

    Every round waits for all workers; a worker missing the round deadline
    aborts the run with :class:`WorkerTimeoutError`. On any failure every
    worker is sent ERROR before the exception propagates.
    """
    M = len(conns)
    if M != cfg.workers:
        raise ProtocolError(f"config expects {cfg.workers} workers, got {M} connections")
    if len(dataset) == 0:
        raise DataError("cannot train on an empty dataset")
    ctx = model.ctx
    trace: list[RoundRecord] = []
    current_round = 0
    pool = ThreadPoolExecutor(max_workers=M, thread_name_prefix="fed-recv")
    try:
        _broadcast(conns, Message(MsgType.HELLO, 0, b"master"))
        _gather(pool, conns, MsgType.HELLO, 0, cfg.round_deadline)

        parts = partition(len(dataset), M, cfg.partition_seed, cfg.batch_size)
        cfg_text = cfg.to_text()
        model_bytes = model_serialize(model)
        for conn, part in zip(conns, parts):
            body = assign_body(part.index, M, cfg_text, model_bytes,
                               dataset_serialize(dataset.subset(part.positions)))
            conn.send(Message(MsgType.ASSIGN, 0, body))
        log.info("assigned %d workers, partition sizes %s", M, [len(p.positions) for p in parts])

        for t in range(1, cfg.rounds + 1):
            current_round = t
            started = time.monotonic()
            msgs = _gather(pool, conns, MsgType.ROUND_DONE, t, cfg.round_deadline)
            results = [parse_round_done(m.body, ctx, t) for m in msgs]
            model = fedavg([r[0] for r in results])
            recs = [r[1] for r in results]
            rec = RoundRecord(t, recs[0].iterations,
                              [c for r in recs for c in r.batch_losses],
                              [n for r in recs for n in r.batch_sizes])
            rec.probe["seconds"] = time.monotonic() - started
            _broadcast(conns, Message(MsgType.AGGREGATED, t, model_serialize(model)))
            if probe is not None:
                probe(model, rec)
            trace.append(rec)
            log.info("round %d/%d aggregated in %.2f s", t, cfg.rounds, rec.probe["seconds"])

        _broadcast(conns, Message(MsgType.FINISH, cfg.rounds))
    except BaseException as e:
        text = str(e) or type(e).__name__
        for c in conns:
            try:
                c.send(Message(MsgType.ERROR, current_round, text.encode("utf-8")))
            except (ConnectionClosed, OSError):
                pass
        raise
    finally:
        for c in conns:
            c.close()
        pool.shutdown(wait=False, cancel_futures=True)
    return model, trace


def run_distributed(cfg: TrainConfig, model: EncryptedModel, dataset: EncryptedDataset, endpoints: Sequence[str],
                    probe: Callable | None = None):
    """Connect to remote workers at ``host:port`` endpoints and run the master loop."""
    conns = []
    try:
        for ep in endpoints:
            conns.append(connect(ep))
    except HEError:
        for c in conns:
            c.close()
        raise
    return master_run(cfg, model, dataset, conns, probe)


def run_local(cfg: TrainConfig, model: EncryptedModel, dataset: EncryptedDataset, probe: Callable | None = None):
    """Same protocol with ``cfg.workers`` in-process workers on loopback pipes."""
    conns, threads = [], []
    for m in range(cfg.workers):
        master_end, worker_end = loopback_pair(f"local-{m + 1}")
        session = WorkerSession(worker_end, f"local-{m + 1}")
        th = threading.Thread(target=session.serve, daemon=True, name=f"fed-worker-{m + 1}")
        th.start()
        conns.append(master_end)
        threads.append(th)
    try:
        return master_run(cfg, model, dataset, conns, probe)
    finally:
        for th in threads:
            th.join(timeout=5.0)
