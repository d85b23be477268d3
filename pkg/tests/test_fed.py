import socket
import threading
import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hetrain import HEContext, HEParams
from hetrain.config import TrainConfig
from hetrain.data import dataset_serialize, encrypt_dataset, preprocess, synth_generate
from hetrain.errors import IncompatibleError, PartitionError, ProtocolError, WorkerTimeoutError
from hetrain.fed import (
    Message,
    MsgType,
    TcpConnection,
    WorkerSession,
    connect,
    decode,
    encode,
    fedavg,
    loopback_pair,
    master_run,
    partition,
    run_distributed,
    run_local,
    worker_run,
)
from hetrain.fed.protocol import assign_body, pack_blobs, parse_assign, unpack_blobs
from hetrain.fed.worker import parse_round_done
from hetrain.henn import NetworkSpec, decrypt_model, encrypt_model, init_model, train, train_round
from hetrain.modelio import model_deserialize, model_serialize


@pytest.fixture(scope="module")
def env():
    ctx = HEContext(HEParams())
    sk, pk = ctx.keygen(np.random.default_rng(21))
    tr, _ = preprocess(synth_generate(per_class=12), 12)
    ds = encrypt_dataset(tr, pk, ctx)
    em = encrypt_model(init_model(NetworkSpec(), 0), pk, ctx)
    return ctx, sk, pk, ds, em


def flat(sk, em):
    return decrypt_model(sk, em).params_vector()


class TestPartition:
    def test_sizes(self):
        assert [len(p.positions) for p in partition(10, 2, 0)] == [5, 5]
        assert [len(p.positions) for p in partition(10, 3, 0)] == [4, 3, 3]

    def test_single(self):
        (p,) = partition(10, 1, 0)
        assert sorted(p.positions) == list(range(10)) and p.index == 1 and p.local_batch == 128

    def test_local_batch(self):
        assert [p.local_batch for p in partition(100, 4, 0, 128)] == [32] * 4
        assert partition(100, 3, 0, 128)[0].local_batch == 42

    def test_errors(self):
        with pytest.raises(PartitionError):
            partition(3, 4, 0)
        with pytest.raises(PartitionError):
            partition(3, 0, 0)

    @settings(max_examples=300)
    @given(n=st.integers(1, 300), M=st.integers(1, 20), seed=st.integers(0, 2**32 - 1))
    def test_cover_disjoint_balanced(self, n, M, seed):
        if M > n:
            with pytest.raises(PartitionError):
                partition(n, M, seed)
            return
        parts = partition(n, M, seed)
        allpos = np.concatenate([p.positions for p in parts])
        assert sorted(allpos) == list(range(n))
        sizes = [len(p.positions) for p in parts]
        assert max(sizes) - min(sizes) <= 1
        assert all(np.array_equal(a.positions, b.positions) for a, b in zip(parts, partition(n, M, seed)))


class TestFedAvg:
    def test_single_model(self, env):
        ctx, sk, pk, ds, em = env
        out = fedavg([em])
        assert np.array_equal(flat(sk, out), flat(sk, em))
        assert all(l == (30, 30) for l in out.levels())

    def test_mean(self, env):
        ctx, sk, pk, ds, em = env
        m2, m4 = init_model(NetworkSpec(), 0), init_model(NetworkSpec(), 0)
        m2.weights[0][0, 0], m4.weights[0][0, 0] = 2.0, 4.0
        out = decrypt_model(sk, fedavg([encrypt_model(m2, pk, ctx), encrypt_model(m4, pk, ctx)]))
        assert out.weights[0][0, 0] == 3.0

    def test_copies_idempotent(self, env):
        ctx, sk, pk, ds, em = env
        for M in (2, 3, 4):
            assert np.allclose(flat(sk, fedavg([em] * M)), flat(sk, em), rtol=1e-15, atol=1e-17)

    def test_no_bootstrap_costs_one_level(self, env):
        ctx, sk, pk, ds, em = env
        assert all(l == (29, 29) for l in fedavg([em, em], bootstrap=False).levels())

    def test_permutation_invariant(self, env):
        ctx, sk, pk, ds, em = env
        models = [encrypt_model(init_model(NetworkSpec(), s), pk, ctx) for s in range(4)]
        ref = flat(sk, fedavg(models))
        for order in ([3, 1, 0, 2], [1, 0, 3, 2]):
            assert np.allclose(flat(sk, fedavg([models[i] for i in order])), ref, atol=1e-15, rtol=0)

    def test_spec_mismatch(self, env):
        ctx, sk, pk, ds, em = env
        other = encrypt_model(init_model(NetworkSpec((21, 16, 5)), 0), pk, ctx)
        with pytest.raises(IncompatibleError):
            fedavg([em, other])
        with pytest.raises(PartitionError):
            fedavg([])

    @pytest.mark.parametrize("M", [2, 4])
    def test_single_step_equivalence(self, env, M):
        ctx, sk, pk, ds, em = env
        sub = ds.subset(range(48))
        cfg = TrainConfig(rounds=1, workers=M, batch_size=48)
        central, _ = train_round(em, sub, 48, cfg.lr, 0, 1)
        local = []
        for p in partition(48, M, 3, 48):
            local.append(train_round(em, sub.subset(p.positions), p.local_batch, cfg.lr, 0, 1)[0])
        assert np.allclose(flat(sk, fedavg(local)), flat(sk, central), atol=1e-9, rtol=0)


frames = st.builds(Message, st.sampled_from(list(MsgType)), st.integers(0, 2**32 - 1), st.binary(max_size=512))


class TestProtocol:
    @settings(max_examples=1000)
    @given(frames)
    def test_roundtrip(self, msg):
        data = encode(msg)
        assert decode(data) == msg
        assert int.from_bytes(data[:4], "little") == len(data) - 4

    @settings(max_examples=1000)
    @given(st.binary(max_size=64))
    def test_fuzz_decode(self, data):
        try:
            msg = decode(data)
        except ProtocolError:
            return
        assert encode(msg) == data

    def test_errors(self):
        with pytest.raises(ProtocolError):
            decode(b"\x01\x00")
        with pytest.raises(ProtocolError):
            decode((5).to_bytes(4, "little") + b"\x63\0\0\0\0")
        with pytest.raises(ProtocolError):
            decode(encode(Message(MsgType.HELLO, 1, b"x")) + b"y")

    @given(st.lists(st.binary(max_size=50), max_size=6))
    def test_blobs(self, blobs):
        assert unpack_blobs(pack_blobs(*blobs), len(blobs)) == blobs

    def test_blob_errors(self):
        data = pack_blobs(b"abc", b"de")
        with pytest.raises(ProtocolError):
            unpack_blobs(data[:-1], 2)
        with pytest.raises(ProtocolError):
            unpack_blobs(data, 1)
        with pytest.raises(ProtocolError):
            parse_assign(b"\x01")

    def test_assign_roundtrip(self):
        body = assign_body(2, 3, "[train]\nrounds = 1\n", b"model", b"part")
        assert parse_assign(body) == (2, 3, "[train]\nrounds = 1\n", b"model", b"part")


def start_session(name="w"):
    master_end, worker_end = loopback_pair(name)
    session = WorkerSession(worker_end, name)
    th = threading.Thread(target=session.serve, daemon=True)
    th.start()
    return master_end, session, th


def assign_msg(cfg, em, ds, index=1):
    return Message(MsgType.ASSIGN, 0, assign_body(index, cfg.workers, cfg.to_text(), model_serialize(em),
                                                  dataset_serialize(ds)))


class TestWorkerSession:
    def test_hello_assign_finish_without_training(self, env):
        ctx, sk, pk, ds, em = env
        conn, session, th = start_session()
        conn.send(Message(MsgType.HELLO, 0, b"master"))
        assert conn.recv(5).type == MsgType.HELLO
        conn.send(assign_msg(TrainConfig(rounds=0), em, ds))
        conn.send(Message(MsgType.FINISH))
        th.join(5)
        assert session.finished and session.round == 0 and session.iterations == 0

    def test_round_done_matches_local_training(self, env):
        ctx, sk, pk, ds, em = env
        cfg = TrainConfig(rounds=1, batch_size=16)
        conn, _, th = start_session()
        conn.send(assign_msg(cfg, em, ds))
        reply = conn.recv(30)
        assert (reply.type, reply.round) == (MsgType.ROUND_DONE, 1)
        got, rec = parse_round_done(reply.body, ctx, 1)
        expect, erec = train_round(em, ds, 16, cfg.lr, cfg.shuffle_seed, 1)
        assert model_serialize(got) == model_serialize(expect)
        assert rec.batch_sizes == erec.batch_sizes and rec.iterations == erec.iterations
        conn.send(Message(MsgType.AGGREGATED, 1, model_serialize(got)))
        conn.send(Message(MsgType.FINISH, 1))
        th.join(5)

    def test_deterministic(self, env):
        ctx, sk, pk, ds, em = env
        cfg = TrainConfig(rounds=1, batch_size=32)
        bodies = []
        for _ in range(2):
            conn, _, th = start_session()
            conn.send(assign_msg(cfg, em, ds))
            bodies.append(conn.recv(30).body)
            conn.send(Message(MsgType.FINISH, 1))
            th.join(5)
        assert bodies[0] == bodies[1]

    def test_stale_round_rejected(self, env):
        ctx, sk, pk, ds, em = env
        conn, session, th = start_session()
        conn.send(assign_msg(TrainConfig(rounds=2, batch_size=64), em, ds))
        assert conn.recv(30).type == MsgType.ROUND_DONE
        conn.send(Message(MsgType.AGGREGATED, 7, model_serialize(em)))
        reply = conn.recv(5)
        assert reply.type == MsgType.ERROR and "stale" in reply.text
        th.join(5)
        assert not session.finished

    def test_malformed_frame(self):
        conn, session, th = start_session()
        conn._out.put((3).to_bytes(4, "little") + b"\x09\x00\x00")
        reply = conn.recv(5)
        assert reply.type == MsgType.ERROR
        th.join(5)
        assert not th.is_alive() and not session.finished

    def test_aggregated_before_assign(self, env):
        conn, _, th = start_session()
        conn.send(Message(MsgType.AGGREGATED, 0, b""))
        assert conn.recv(5).type == MsgType.ERROR
        th.join(5)


class TestMaster:
    def test_m1_equals_centralized(self, env):
        ctx, sk, pk, ds, em = env
        cfg = TrainConfig(rounds=2, batch_size=16)
        central, ctrace = train(em, ds, cfg)
        dist, dtrace = run_local(cfg, em, ds)
        assert model_serialize(central) == model_serialize(dist)
        assert [r.iterations for r in ctrace] == [r.iterations for r in dtrace]

    def test_zero_rounds(self, env):
        ctx, sk, pk, ds, em = env
        master_end, worker_end = loopback_pair("w")
        seen = []
        session = WorkerSession(worker_end)
        orig = session.handle
        session.handle = lambda m: (seen.append(m.type), orig(m))
        th = threading.Thread(target=session.serve, daemon=True)
        th.start()
        out, trace = master_run(TrainConfig(rounds=0), em, ds, [master_end])
        th.join(5)
        assert out is em and trace == []
        assert seen == [MsgType.HELLO, MsgType.ASSIGN, MsgType.FINISH]

    def test_probe_called_every_round(self, env):
        ctx, sk, pk, ds, em = env
        rounds = []
        run_local(TrainConfig(rounds=2, workers=2, batch_size=32), em, ds, lambda m, r: rounds.append(r.round))
        assert rounds == [1, 2]

    def test_timeout_names_worker(self, env):
        ctx, sk, pk, ds, em = env
        silent_master, silent_worker = loopback_pair("silent-7")
        good_master, good_worker = loopback_pair("good")
        th = threading.Thread(target=WorkerSession(good_worker).serve, daemon=True)
        th.start()

        def hello_only():
            silent_worker.recv(5)
            silent_worker.send(Message(MsgType.HELLO, 0, b"worker"))
            try:
                while True:
                    silent_worker.recv(10)
            except Exception:
                pass

        threading.Thread(target=hello_only, daemon=True).start()
        cfg = TrainConfig(rounds=1, workers=2, batch_size=64, round_deadline=2.0)
        t0 = time.monotonic()
        with pytest.raises(WorkerTimeoutError) as ei:
            master_run(cfg, em, ds, [good_master, silent_master])
        assert "silent-7" in str(ei.value) and time.monotonic() - t0 < 20
        assert ei.value.exit_code == 3
        th.join(5)

    def test_worker_error_propagates(self, env):
        ctx, sk, pk, ds, em = env
        m_end, w_end = loopback_pair("grumpy")

        def grumpy():
            w_end.recv(5)
            w_end.send(Message(MsgType.ERROR, 0, b"nope"))

        threading.Thread(target=grumpy, daemon=True).start()
        with pytest.raises(ProtocolError, match="nope"):
            master_run(TrainConfig(rounds=1), em, ds, [m_end])

    def test_worker_count_mismatch(self, env):
        ctx, sk, pk, ds, em = env
        a, _ = loopback_pair()
        with pytest.raises(ProtocolError):
            master_run(TrainConfig(workers=2), em, ds, [a])


def serve_in_thread(**kw):
    ready = threading.Event()
    addr = {}

    def on_ready(host, port):
        addr["ep"] = f"{host}:{port}"
        ready.set()

    th = threading.Thread(target=worker_run, args=("127.0.0.1:0", on_ready), kwargs=kw, daemon=True)
    th.start()
    assert ready.wait(5)
    return addr["ep"], th


class TestTcp:
    def test_two_workers_match_loopback(self, env):
        ctx, sk, pk, ds, em = env
        cfg = TrainConfig(rounds=2, workers=2, batch_size=32)
        eps = [serve_in_thread()[0] for _ in range(2)]
        remote, _ = run_distributed(cfg, em, ds, eps)
        local, _ = run_local(cfg, em, ds)
        assert model_serialize(remote) == model_serialize(local)

    def test_second_master_refused(self):
        ep, th = serve_in_thread()
        first = connect(ep)
        first.send(Message(MsgType.HELLO, 0, b"master"))
        assert first.recv(5).type == MsgType.HELLO
        second = connect(ep)
        reply = second.recv(5)
        assert reply.type == MsgType.ERROR and "busy" in reply.text
        second.close()
        first.send(Message(MsgType.FINISH))
        th.join(5)
        assert not th.is_alive()

    def test_malformed_frame_over_tcp(self):
        ep, th = serve_in_thread(max_sessions=1)
        host, port = ep.split(":")
        s = socket.create_connection((host, int(port)))
        s.sendall((2).to_bytes(4, "little") + b"\x01\x00")
        conn = TcpConnection(s, "raw")
        assert conn.recv(5).type == MsgType.ERROR
        conn.close()
        th.join(5)
        assert not th.is_alive()

    def test_unreachable(self):
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        with pytest.raises(ProtocolError):
            connect(f"127.0.0.1:{port}", timeout=2)
