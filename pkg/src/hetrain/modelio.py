"""HEMODEL1 model files (encrypted or plain payload)."""

from __future__ import annotations

import io
import struct

import numpy as np

from .activation import ActivationPoly
from .cipher import HEContext, ct_deserialize, ct_serialize
from .errors import FormatError
from .henn.model import EncryptedLayer, EncryptedModel, NetworkSpec, PlainModel, weight_axis

MODEL_MAGIC = b"HEMODEL1"
MODEL_VERSION = 1
FLAG_PLAIN = 0x01


def _header(spec: NetworkSpec, axes, act: ActivationPoly, flags: int) -> bytes:
    buf = io.BytesIO()
    buf.write(MODEL_MAGIC)
    buf.write(struct.pack("<BBI", MODEL_VERSION, flags, spec.n_layers))
    for (i, o), axis in zip(zip(spec.dims[:-1], spec.dims[1:]), axes):
        buf.write(struct.pack("<IIB", i, o, axis))
    buf.write(struct.pack("<Idd", act.degree, *act.domain))
    buf.write(np.asarray(act.coeffs, dtype="<f8").tobytes())
    return buf.getvalue()


def model_serialize(m: EncryptedModel | PlainModel) -> bytes:
    if isinstance(m, PlainModel):
        axes = [weight_axis(k) for k in range(1, m.spec.n_layers + 1)]
        out = [_header(m.spec, axes, m.act, FLAG_PLAIN)]
        for W, b in zip(m.weights, m.biases):
            out.append(np.asarray(W, dtype="<f8").tobytes())
            out.append(np.asarray(b, dtype="<f8").tobytes())
        return b"".join(out)
    out = [_header(m.spec, [l.axis for l in m.layers], m.act, 0)]
    for layer in m.layers:
        for ct in (layer.W, layer.b):
            blob = ct_serialize(ct)
            out.append(struct.pack("<I", len(blob)))
            out.append(blob)
    return b"".join(out)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("truncated model file")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def model_deserialize(data: bytes, ctx: HEContext | None = None) -> EncryptedModel | PlainModel:
    """Parse a model file. Encrypted payloads need the ``ctx`` to bind to."""
    r = _Reader(data)
    if r.take(8) != MODEL_MAGIC:
        raise FormatError("bad model magic")
    version, flags, n_layers = r.unpack("<BBI")
    if version != MODEL_VERSION:
        raise FormatError(f"unsupported model version {version}")
    if not 1 <= n_layers <= 1024:
        raise FormatError(f"implausible layer count {n_layers}")
    dims, axes = [], []
    for _ in range(n_layers):
        i, o, axis = r.unpack("<IIB")
        if dims and dims[-1] != i:
            raise FormatError("layer dimensions do not chain")
        if not dims:
            dims.append(i)
        dims.append(o)
        axes.append(axis)
    degree, a, b = r.unpack("<Idd")
    coeffs = np.frombuffer(r.take(8 * (degree + 1)), dtype="<f8")
    act = ActivationPoly(tuple(float(c) for c in coeffs), (a, b))
    spec = NetworkSpec(tuple(dims), degree, (a, b))
    if flags & FLAG_PLAIN:
        weights, biases = [], []
        for i, o in zip(dims[:-1], dims[1:]):
            weights.append(np.frombuffer(r.take(8 * i * o), dtype="<f8").reshape(o, i).astype(np.float64))
            biases.append(np.frombuffer(r.take(8 * o), dtype="<f8").astype(np.float64))
        model = PlainModel(spec, weights, biases, act)
    else:
        if ctx is None:
            raise FormatError("encrypted model needs a context to load")
        layers = []
        for (i, o), axis in zip(zip(dims[:-1], dims[1:]), axes):
            cts = []
            for _ in range(2):
                (n,) = r.unpack("<I")
                cts.append(ct_deserialize(r.take(n), ctx))
            layers.append(EncryptedLayer(cts[0], cts[1], axis, i, o))
        model = EncryptedModel(spec, tuple(layers), act, ctx)
    if r.pos != len(data):
        raise FormatError(f"{len(data) - r.pos} trailing bytes after model payload")
    return model


def save_model(path, m):
    with open(path, "wb") as fh:
        fh.write(model_serialize(m))


def load_model(path, ctx: HEContext | None = None):
    with open(path, "rb") as fh:
        return model_deserialize(fh.read(), ctx)
