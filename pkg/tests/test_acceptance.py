"""Acceptance gate. Each test is one criterion, checked at its stated tolerance and time limit."""

import time

import numpy as np
import pytest

from hetrain import HEContext, HEParams, encrypt_dataset, evaluate, preprocess, synth_generate
from hetrain.cli import main
from hetrain.config import TrainConfig
from hetrain.errors import DepthBudgetError, LevelExhaustedError
from hetrain.fed import run_local
from hetrain.henn import (
    NetworkSpec,
    decrypt_model,
    encrypt_model,
    forward,
    init_model,
    plain_loss,
    plain_output,
    plain_train,
    predict_plain,
    train,
)
from hetrain.packing import PackedLayout, he_matvec, pack1d, pack2d, unpack1d, unpack2d
from helpers import central_differences, encrypt_rows, encrypted_batch_grads

SPEC = NetworkSpec()
S, B = 32, 1024


def accept(number, title):
    return pytest.mark.acceptance(number, title)


@pytest.fixture(scope="module")
def env():
    ctx = HEContext(HEParams())
    sk, pk = ctx.keygen(np.random.default_rng(2024))
    return ctx, sk, pk


@pytest.fixture(scope="module")
def synth():
    """Default synthetic corpus: 1,000 rows, stratified 80:20 split, scaled on train."""
    return preprocess(synth_generate(), per_class=200)


@pytest.fixture(scope="module")
def trained(env, synth):
    """Encrypted and plaintext training from the same init and schedule."""
    ctx, sk, pk = env
    train_set, _ = synth
    cfg = TrainConfig(rounds=30, lr=0.9, batch_size=128)
    init = init_model(cfg.spec, cfg.init_seed)
    t0 = time.monotonic()
    em, trace = train(encrypt_model(init, pk, ctx), encrypt_dataset(train_set, pk, ctx, SPEC.output_axis()), cfg)
    enc_seconds = time.monotonic() - t0
    plain, _ = plain_train(init, train_set.features, train_set.onehot, cfg)
    return em, trace, plain, enc_seconds


def elapsed_ok(record_property, t0, limit):
    dt = time.monotonic() - t0
    record_property("detail", f"{dt:.1f} s / {limit} s")
    assert dt < limit


@accept(1, "packing round-trip, 1000 per axis, exact")
def test_packing_roundtrip(record_property):
    t0 = time.monotonic()
    rng = np.random.default_rng(1)
    for axis in (0, 1):
        for _ in range(1000):
            n = int(rng.integers(1, S + 1))
            x = rng.standard_normal(n)
            assert np.array_equal(unpack1d(pack1d(x, axis, S, B), PackedLayout.vector(n, axis, S, B)), x)
            m, k = (int(v) for v in rng.integers(1, S + 1, 2))
            W = rng.standard_normal((m, k))
            assert np.array_equal(unpack2d(pack2d(W, axis, S, B), PackedLayout.matrix(m, k, axis, S, B)), W)
    elapsed_ok(record_property, t0, 5)


@accept(2, "encrypted matvec vs W @ x, 200 cases, 1e-9")
def test_matvec_oracle(env, record_property):
    ctx, sk, pk = env
    t0 = time.monotonic()
    rng = np.random.default_rng(2)
    worst = 0.0
    for i in range(200):
        axis = i % 2
        m, n = (int(v) for v in rng.integers(1, S + 1, 2))
        W, x = rng.uniform(-1, 1, (m, n)), rng.uniform(-1, 1, n)
        y = he_matvec(ctx.encrypt(pk, pack2d(W, axis, S, B)), ctx.encrypt(pk, pack1d(x, axis, S, B)), axis, S)
        got = unpack1d(ctx.decrypt(sk, y), PackedLayout.vector(m, 1 - axis, S, B))
        worst = max(worst, float(np.abs(got - W @ x).max()))
    assert worst <= 1e-9
    dt = time.monotonic() - t0
    record_property("detail", f"max err {worst:.1e}, {dt:.1f} s")
    assert dt < 30


@accept(3, "encrypted forward vs plaintext polynomial forward, 100 inputs, 1e-6")
def test_forward_oracle(env, record_property):
    ctx, sk, pk = env
    t0 = time.monotonic()
    m = init_model(SPEC, 3)
    em = encrypt_model(m, pk, ctx)
    layout = em.out_layout(len(em.layers))
    X = np.random.default_rng(3).random((100, 21))
    worst = 0.0
    for x, c in zip(X, encrypt_rows(ctx, pk, X)):
        got = unpack1d(ctx.decrypt(sk, forward(em, c).output), layout)
        worst = max(worst, float(np.abs(got - plain_output(m, x)).max()))
    assert worst <= 1e-6
    dt = time.monotonic() - t0
    record_property("detail", f"max err {worst:.1e}, {dt:.1f} s")
    assert dt < 60


@accept(4, "encrypted gradients vs central differences, 20 points, rel 1e-4")
def test_gradient_check(env, record_property):
    ctx, sk, pk = env
    t0 = time.monotonic()
    rng = np.random.default_rng(4)
    worst = 0.0
    for point in range(20):
        m = init_model(SPEC, 100 + point)
        X, Y = rng.random((2, 21)), np.eye(5)[rng.integers(0, 5, 2)]
        g = encrypted_batch_grads(sk, pk, encrypt_model(m, pk, ctx), X, Y)
        fd = central_differences(lambda th: plain_loss(m.with_params_vector(th), X, Y), m.params_vector(), 1e-4)
        worst = max(worst, float(np.linalg.norm(g - fd) / np.linalg.norm(fd)))
    assert worst <= 1e-4
    dt = time.monotonic() - t0
    record_property("detail", f"max rel err {worst:.1e}, {dt:.1f} s")
    assert dt < 300


@accept(5, "FedAvg of full-batch local steps equals the centralized step, M in {2,4}, 1e-9")
def test_fedavg_equivalence(env, synth, record_property):
    ctx, sk, pk = env
    t0 = time.monotonic()
    data = encrypt_dataset(synth[0].subset(np.arange(128)), pk, ctx, SPEC.output_axis())
    em = encrypt_model(init_model(SPEC, 0), pk, ctx)
    central, _ = train(em, data, TrainConfig(rounds=1, batch_size=128))
    worst = 0.0
    for M in (2, 4):
        cfg = TrainConfig(rounds=1, batch_size=128, workers=M)
        assert cfg.local_batch_size == 128 // M
        agg, _ = run_local(cfg, em, data)
        for a, c in zip(agg.layers, central.layers):
            for pa, pc in ((a.W, c.W), (a.b, c.b)):
                worst = max(worst, float(np.abs(ctx.decrypt(sk, pa) - ctx.decrypt(sk, pc)).max()))
    assert worst <= 1e-9
    dt = time.monotonic() - t0
    record_property("detail", f"max slot diff {worst:.1e}, {dt:.1f} s")
    assert dt < 60


@accept(6, "CLI train: distributed M=1 byte-identical to centralized")
def test_cli_distributed_equals_centralized(tmp_path, record_property):
    t0 = time.monotonic()
    assert main(["keygen", "--out", str(tmp_path / "k"), "--seed", "6"]) == 0
    assert main(["encrypt-data", "--synth", "--pk", str(tmp_path / "k.pk"), "--out", str(tmp_path / "d.bin")]) == 0
    base = ["train", "--data", str(tmp_path / "d.bin"), "--pk", str(tmp_path / "k.pk"), "--rounds", "10"]
    assert main([*base, "--out", str(tmp_path / "central.bin")]) == 0
    assert main([*base, "--mode", "distributed", "--local-workers", "1", "--out", str(tmp_path / "dist.bin")]) == 0
    assert (tmp_path / "central.bin").read_bytes() == (tmp_path / "dist.bin").read_bytes()
    elapsed_ok(record_property, t0, 120)


@accept(7, "encrypted vs plaintext training, T=30: accuracy within 1 pp, both > 85%")
def test_convergence_parity(trained, synth, env, record_property):
    em, _, plain, seconds = trained
    test = synth[1]
    r_enc = evaluate(predict_plain(decrypt_model(env[1], em), test.features), test.labels, 5)
    r_plain = evaluate(predict_plain(plain, test.features), test.labels, 5)
    gap = abs(r_enc.accuracy - r_plain.accuracy) * 100
    record_property("detail", f"enc acc {r_enc.accuracy:.4f} (hit {r_enc.hit_rate:.4f}), plain acc "
                              f"{r_plain.accuracy:.4f} (hit {r_plain.hit_rate:.4f}), gap {gap:.3f} pp, {seconds:.0f} s")
    assert gap <= 1.0
    assert r_enc.accuracy > 0.85 and r_plain.accuracy > 0.85
    assert seconds < 600


@accept(8, "encrypted vs plain inference agreement: 100% noise off, >= 99% at sigma 1e-4")
def test_inference_agreement(trained, synth, env, record_property):
    t0 = time.monotonic()
    _, sk, _ = env
    model = decrypt_model(sk, trained[0])
    X = synth[1].features
    expect = predict_plain(model, X)
    rates = []
    for sigma in (0.0, 1e-4):
        ctx = HEContext(HEParams(noise_sigma=sigma), noise_seed=8)
        sk2, pk2 = ctx.keygen(np.random.default_rng(8))
        em = encrypt_model(model, pk2, ctx)
        layout = em.out_layout(len(em.layers))
        got = [int(np.argmax(unpack1d(ctx.decrypt(sk2, forward(em, c).output), layout)))
               for c in encrypt_rows(ctx, pk2, X)]
        rates.append(float(np.mean(np.asarray(got) == expect)))
    dt = time.monotonic() - t0
    record_property("detail", f"agreement {rates[0]:.4f} / {rates[1]:.4f} on {len(X)} samples, {dt:.1f} s")
    assert rates[0] == 1.0 and rates[1] >= 0.99
    assert dt < 300


@accept(9, "level budget: low budget exhausts in round 1, default budget completes T=30")
def test_level_budget(trained, synth, record_property):
    t0 = time.monotonic()
    _, trace, _, _ = trained
    assert len(trace) == 30 and all(lvl == (30, 30) for lvl in trained[0].levels())
    ctx = HEContext(HEParams(level_budget=28))
    sk, pk = ctx.keygen(np.random.default_rng(9))
    init = init_model(SPEC, 0)
    with pytest.raises(DepthBudgetError):
        encrypt_model(init, pk, ctx)
    data = encrypt_dataset(synth[0].subset(np.arange(16)), pk, ctx, SPEC.output_axis())
    seen = []
    with pytest.raises(LevelExhaustedError):
        train(encrypt_model(init, pk, ctx, audit=False), data, TrainConfig(rounds=30, batch_size=8),
              lambda m, rec: seen.append(rec.round))
    assert seen == []  # raised before round 1 finished
    elapsed_ok(record_property, t0, 120)


@accept(10, "metrics on the hand-counted example: 0.75, 5/6, 0.75 exactly")
def test_metrics_exact(record_property):
    r = evaluate([0, 1, 1, 1], [0, 0, 1, 1], 2)
    record_property("detail", f"{r.accuracy!r}, {r.precision!r}, {r.recall!r}")
    assert (r.accuracy, r.precision, r.recall) == (0.75, 5 / 6, 0.75)


@accept(11, "per-round wall time, 4 vs 1 in-process workers (informational)")
def test_speedup_informational(env, synth, record_property):
    import os

    ctx, sk, pk = env
    data = encrypt_dataset(synth[0].subset(np.arange(256)), pk, ctx, SPEC.output_axis())
    em = encrypt_model(init_model(SPEC, 0), pk, ctx)
    times = {}
    for M in (1, 4):
        t0 = time.monotonic()
        run_local(TrainConfig(rounds=1, batch_size=128, workers=M), em, data)
        times[M] = time.monotonic() - t0
    record_property("detail", f"1 worker {times[1]:.2f} s, 4 workers {times[4]:.2f} s, "
                              f"speedup {times[1] / times[4]:.2f}x on {os.cpu_count()} cpu(s), not gating")
