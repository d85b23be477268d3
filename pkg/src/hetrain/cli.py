"""``hetrain`` command line.

Exit codes: 0 success, 1 usage/parameters, 2 data or format, 3 protocol or
timeout, 4 level budget exhausted.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .cipher import HEContext, PublicKey, SecretKey, key_deserialize, key_serialize
from .config import TrainConfig, load_config
from .data import (
    DATA_MAGIC,
    dataset_deserialize,
    dataset_serialize,
    default_class_names,
    encrypt_dataset,
    evaluate,
    load_csv,
    preprocess,
    synth_generate,
    write_csv,
)
from .errors import DataError, FormatError, HEError, KeyMismatchError, ParseError, UsageError
from .henn import decrypt_model, decrypt_round_loss, encrypt_model, forward, init_model, predict_plain, train
from .modelio import load_model, model_serialize, save_model
from .packing import pack1d, unpack1d

log = logging.getLogger("hetrain")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _read(path) -> bytes:
    try:
        return Path(path).read_bytes()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e.strerror}") from None


def _write(path, data: bytes, force: bool = True):
    path = Path(path)
    if path.exists() and not force:
        raise UsageError(f"{path} exists; pass --force to overwrite")
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True)
    path.write_bytes(data)


def _load_key(path, kind):
    key = key_deserialize(_read(path))
    if not isinstance(key, kind):
        want = "secret" if kind is SecretKey else "public"
        raise KeyMismatchError(f"{path} is not a {want} key")
    return key


def _config(args) -> TrainConfig:
    return load_config(getattr(args, "config", None))


def _context(cfg: TrainConfig, key) -> tuple[TrainConfig, HEContext]:
    """Key files carry the cipher parameters; they override the config's ``[he]``."""
    cfg = cfg.replace(he=key.params)
    return cfg, HEContext(key.params, noise_seed=cfg.noise_seed)


def _fp(key) -> str:
    return key.fingerprint.hex()


# keygen

def cmd_keygen(args) -> int:
    cfg = load_config(args.params or args.config)
    seed = args.seed if args.seed is not None else cfg.key_seed
    sk, pk = HEContext(cfg.he).keygen(np.random.default_rng(seed))
    sk_path, pk_path = Path(f"{args.out}.sk"), Path(f"{args.out}.pk")
    for p in (sk_path, pk_path):
        if p.exists() and not args.force:
            raise UsageError(f"{p} exists; pass --force to overwrite")
    _write(sk_path, key_serialize(sk))
    _write(pk_path, key_serialize(pk))
    print(f"secret key  {sk_path}")
    print(f"public key  {pk_path}")
    print(f"fingerprint {_fp(pk)}")
    return 0


# encrypt-data

def _split_sizes(train_per_class: int, test_frac: float) -> tuple[int, float]:
    """Rows to sample per class so that ``train_per_class`` remain after the split."""
    if not 0.0 <= test_frac < 1.0:
        raise UsageError("--test-frac must be in [0, 1)")
    n_test = int(round(train_per_class * test_frac / (1.0 - test_frac)))
    total = train_per_class + n_test
    return total, n_test / total


def cmd_encrypt_data(args) -> int:
    cfg = _config(args)
    pk = _load_key(args.pk, PublicKey)
    cfg, ctx = _context(cfg, pk)
    per_class = args.per_class or cfg.per_class
    total, frac = _split_sizes(per_class, args.test_frac)
    n_features, n_classes = cfg.dims[0], cfg.dims[-1]
    if args.synth:
        raw = synth_generate(n_classes, n_features, total, seed=cfg.synth_seed)
    else:
        raw = load_csv(args.csv, n_features, default_class_names(n_classes))
    train_set, test_set = preprocess(raw, total, cfg.split_seed, frac)
    ed = encrypt_dataset(train_set, pk, ctx, y_axis=cfg.spec.output_axis())
    _write(args.out, dataset_serialize(ed))
    test_out = args.test_out or f"{args.out}.test.csv"
    write_csv(test_out, test_set)
    print(f"encrypted {len(ed)} pairs -> {args.out}")
    print(f"features  axis {ed.x_layout.axis} n={ed.x_layout.shape[0]}; labels axis {ed.y_layout.axis} "
          f"n={ed.y_layout.shape[0]} (S={ctx.params.slot_size}, B={ctx.params.ct_size})")
    print(f"plain test split {len(test_set)} rows -> {test_out}")
    return 0


# train

def _endpoints(values) -> list[str]:
    out = []
    for v in values or []:
        out += [e.strip() for e in v.split(",") if e.strip()]
    return out


def _make_probe(args, cfg, n_out):
    """Per-round trace hook. Decrypting with the secret key is for experiments only."""
    sk = _load_key(args.probe_sk, SecretKey) if args.probe_sk else None
    test = load_csv(args.probe_data, cfg.dims[0], default_class_names(n_out)) if sk and args.probe_data else None
    rows = []

    def probe(model, rec):
        row = {"round": rec.round, "iterations": rec.iterations,
               "seconds": rec.probe.get("seconds", ""), "loss": "", "accuracy": "", "hit_rate": ""}
        if sk is not None:
            row["loss"] = decrypt_round_loss(sk, model, rec)
            if test is not None and len(test):
                rep = evaluate(predict_plain(decrypt_model(sk, model), test.features), test.labels, n_out)
                row["accuracy"], row["hit_rate"] = rep.accuracy, rep.hit_rate
        rows.append(row)
        print("round {round:>3}  iter {iterations:>5}  loss {loss}  acc {accuracy}".format(**row), flush=True)

    return probe, rows


def cmd_train(args) -> int:
    cfg = _config(args)
    for name in ("rounds", "lr", "batch_size"):
        if getattr(args, name) is not None:
            cfg = cfg.replace(**{name: getattr(args, name)})
    pk = _load_key(args.pk, PublicKey)
    cfg, ctx = _context(cfg, pk)
    endpoints = _endpoints(args.workers)
    if args.mode == "distributed":
        if endpoints and args.local_workers:
            raise UsageError("give either --workers or --local-workers, not both")
        if not endpoints and not args.local_workers:
            raise UsageError("distributed mode needs --workers host:port[,host:port...] or --local-workers N")
        cfg = cfg.replace(workers=len(endpoints) or args.local_workers)
    elif endpoints or args.local_workers:
        raise UsageError("--workers/--local-workers only apply to --mode distributed")

    data = dataset_deserialize(_read(args.data), ctx)
    if data.xs and data.xs[0].key_fingerprint != pk.fingerprint:
        raise KeyMismatchError("dataset was encrypted under a different key")
    plain = init_model(cfg.spec, cfg.init_seed, ctx.params.slot_size)
    model = encrypt_model(plain, pk, ctx)
    probe, rows = _make_probe(args, cfg, cfg.dims[-1])

    if args.mode == "centralized":
        model, _ = train(model, data, cfg, _timed(probe))
    else:
        from .fed import run_distributed, run_local

        if endpoints:
            model, _ = run_distributed(cfg, model, data, endpoints, probe)
        else:
            model, _ = run_local(cfg, model, data, probe)
    save_model(args.out, model)
    trace_path = args.trace or f"{args.out}.trace.csv"
    with open(trace_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, ["round", "iterations", "seconds", "loss", "accuracy", "hit_rate"])
        w.writeheader()
        w.writerows(rows)
    print(f"model -> {args.out} ({len(model_serialize(model))} bytes); trace -> {trace_path}")
    return 0


def _timed(probe):
    last = [time.monotonic()]

    def wrapped(model, rec):
        now = time.monotonic()
        rec.probe.setdefault("seconds", now - last[0])
        probe(model, rec)
        last[0] = time.monotonic()

    return wrapped


# worker

def cmd_worker(args) -> int:
    from .fed import worker_run

    def ready(host, port):
        print(f"listening on {host}:{port}", flush=True)

    worker_run(args.listen, ready, args.max_sessions)
    return 0


# infer

def _load_features(path, n_features: int) -> np.ndarray:
    """CSV with a header; ``n_features`` numeric columns, optionally followed by a label column."""
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            return np.zeros((0, n_features))
        if len(header) not in (n_features, n_features + 1):
            raise DataError(f"{path}:1: expected {n_features} feature columns, got {len(header)}")
        for row in reader:
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != len(header):
                raise ParseError(path, reader.line_num, f"expected {len(header)} columns, got {len(row)}")
            try:
                rows.append([float(v) for v in row[:n_features]])
            except ValueError as e:
                raise ParseError(path, reader.line_num, str(e)) from None
    return np.array(rows, dtype=np.float64).reshape(len(rows), n_features)


def cmd_infer(args) -> int:
    sk = _load_key(args.sk, SecretKey)
    cfg, ctx = _context(_config(args), sk)
    model = load_model(args.model, ctx)
    n_in, n_out = model.spec.dims[0], model.spec.dims[-1]
    names = default_class_names(n_out)
    if not hasattr(model, "layers"):
        raise FormatError("inference needs an encrypted model file")
    raw = _read(args.input)
    if raw.startswith(DATA_MAGIC):
        cts = dataset_deserialize(raw, ctx).xs
        encrypted = True
    else:
        X = _load_features(args.input, n_in)
        encrypted = args.encrypted
        cts = None
    if encrypted:
        if model.layers[0].W.key_fingerprint != sk.fingerprint:
            raise KeyMismatchError("secret key does not match the model")
        if cts is None:
            pk = ctx.pk_gen(sk)
            p = ctx.params
            cts = [ctx.encrypt(pk, pack1d(x, 0, p.slot_size, p.ct_size)) for x in X]
        layout = model.out_layout(len(model.layers))
        preds = [int(np.argmax(unpack1d(ctx.decrypt(sk, forward(model, c).output), layout))) for c in cts]
    else:
        plain = decrypt_model(sk, model)
        preds = [int(v) for v in np.atleast_1d(predict_plain(plain, X))] if len(X) else []
    out = "".join(f"{names[p]}\n" for p in preds)
    if args.out:
        Path(args.out).write_text(out, encoding="utf-8")
    else:
        sys.stdout.write(out)
    return 0


# eval

def _read_labels(path, names) -> list[int]:
    """One label per line (class name or index), or a CSV with a header whose last column is the label."""
    lookup = {n: i for i, n in enumerate(names)}
    with open(path, encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    if lines and "," in lines[0]:
        lines = [ln.rsplit(",", 1)[-1].strip() for ln in lines[1:]]
    out = []
    for i, ln in enumerate(lines, start=1):
        if not ln:
            continue
        if ln in lookup:
            out.append(lookup[ln])
        elif ln.isdigit() and int(ln) < len(names):
            out.append(int(ln))
        else:
            raise ParseError(path, i, f"unknown label {ln!r}")
    return out


def cmd_eval(args) -> int:
    names = default_class_names(args.classes)
    preds = _read_labels(args.preds, names)
    truth = _read_labels(args.truth, names)
    if len(preds) != len(truth):
        raise DataError(f"length mismatch: {len(preds)} predictions vs {len(truth)} labels")
    rep = evaluate(preds, truth, args.classes)
    sys.stdout.write(rep.as_text())
    report = args.report or f"{args.preds}.metrics.json"
    d = rep.as_dict()
    d["classes"] = list(names)
    Path(report).write_text(json.dumps(d, indent=2) + "\n", encoding="utf-8")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hetrain", description="Train and run neural networks on homomorphically encrypted data.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    k = sub.add_parser("keygen", help="generate a secret/public key pair")
    k.add_argument("--params", help="config file whose [he] section sets the cipher parameters")
    k.add_argument("--config", help="alias of --params")
    k.add_argument("--out", required=True, help="output prefix; writes PREFIX.sk and PREFIX.pk")
    k.add_argument("--seed", type=int, help="key seed (default: [seeds] key, else fresh entropy)")
    k.add_argument("--force", action="store_true")
    k.set_defaults(func=cmd_keygen)

    e = sub.add_parser("encrypt-data", help="preprocess and encrypt a dataset")
    src = e.add_mutually_exclusive_group(required=True)
    src.add_argument("--csv")
    src.add_argument("--synth", action="store_true", help="use the seeded synthetic generator")
    e.add_argument("--pk", required=True)
    e.add_argument("--out", required=True)
    e.add_argument("--config")
    e.add_argument("--per-class", type=int, help="training rows per class (default from config)")
    e.add_argument("--test-frac", type=float, default=0.2)
    e.add_argument("--test-out", help="plain test split CSV (default OUT.test.csv)")
    e.set_defaults(func=cmd_encrypt_data)

    t = sub.add_parser("train", help="train an encrypted model")
    t.add_argument("--mode", choices=("centralized", "distributed"), default="centralized")
    t.add_argument("--data", required=True, help="encrypted dataset (HEDATA01)")
    t.add_argument("--pk", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--trace", help="per-round trace CSV (default OUT.trace.csv)")
    t.add_argument("--workers", action="append", help="worker endpoints host:port, comma separated or repeated")
    t.add_argument("--local-workers", type=int, help="run N in-process workers instead of remote ones")
    t.add_argument("--rounds", type=int)
    t.add_argument("--lr", type=float)
    t.add_argument("--batch", dest="batch_size", type=int)
    t.add_argument("--probe-sk", help="EXPERIMENTS ONLY: decrypt the model each round to log loss/accuracy")
    t.add_argument("--probe-data", help="plain test CSV scored by --probe-sk")
    t.set_defaults(func=cmd_train)

    w = sub.add_parser("worker", help="serve one master at a time")
    w.add_argument("--listen", required=True, help="host:port (port 0 picks a free port)")
    w.add_argument("--max-sessions", type=int)
    w.set_defaults(func=cmd_worker)

    i = sub.add_parser("infer", help="classify samples with a trained model")
    i.add_argument("--model", required=True)
    i.add_argument("--sk", required=True)
    i.add_argument("--input", required=True, help="feature CSV, or an HEDATA01 file (implies --encrypted)")
    i.add_argument("--encrypted", action="store_true", help="encrypt inputs and run the encrypted forward pass")
    i.add_argument("--config")
    i.add_argument("--out")
    i.set_defaults(func=cmd_infer)

    v = sub.add_parser("eval", help="score predictions against labels")
    v.add_argument("--preds", required=True)
    v.add_argument("--truth", required=True)
    v.add_argument("--classes", type=int, default=5)
    v.add_argument("--report", help="JSON report path (default PREDS.metrics.json)")
    v.set_defaults(func=cmd_eval)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(levelname)s %(message)s")
        return args.func(args)
    except HEError as e:
        print(f"hetrain: error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("hetrain: interrupted", file=sys.stderr)
        return 130
    except OSError as e:
        print(f"hetrain: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
