"""Federated training over encrypted models: partitioning, FedAvg and the master/worker protocol."""

from .aggregate import Partition, fedavg, partition
from .master import master_run, run_distributed, run_local
from .protocol import Message, MsgType, decode, encode
from .transport import ConnectionClosed, LoopbackConnection, TcpConnection, connect, loopback_pair
from .worker import WorkerSession, worker_run

__all__ = [
    "ConnectionClosed",
    "LoopbackConnection",
    "Message",
    "MsgType",
    "Partition",
    "TcpConnection",
    "WorkerSession",
    "connect",
    "decode",
    "encode",
    "fedavg",
    "loopback_pair",
    "master_run",
    "partition",
    "run_distributed",
    "run_local",
    "worker_run",
]
