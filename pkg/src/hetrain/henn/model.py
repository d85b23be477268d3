"""Network specs, plain/encrypted models and their conversion."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..activation import ActivationPoly, cheb_fit_silu
from ..cipher import Ciphertext, HEContext, PublicKey, SecretKey
from ..errors import CapacityError, IncompatibleError, LayoutError
from ..packing import PackedLayout, pack1d, pack2d, unpack1d, unpack2d


def weight_axis(k: int) -> int:
    """Packing axis of layer ``k`` (1-based): 0 for odd layers, 1 for even."""
    return 0 if k % 2 == 1 else 1


def bias_axis(k: int) -> int:
    return 1 - weight_axis(k)


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int


@dataclass(frozen=True)
class NetworkSpec:
    dims: tuple = (21, 32, 16, 5)
    act_degree: int = 15
    act_domain: tuple = (-8.0, 8.0)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "act_domain", tuple(float(v) for v in self.act_domain))
        if len(self.dims) < 2 or min(self.dims) < 1:
            raise ValueError(f"bad network dims {self.dims}")

    @property
    def layers(self) -> list[LayerSpec]:
        return [LayerSpec(i, o) for i, o in zip(self.dims[:-1], self.dims[1:])]

    @property
    def n_layers(self) -> int:
        return len(self.dims) - 1

    def check_capacity(self, S: int):
        if max(self.dims) > S:
            raise CapacityError(f"layer width {max(self.dims)} exceeds segment size {S}")

    def activation(self) -> ActivationPoly:
        return cheb_fit_silu(self.act_degree, self.act_domain)

    def output_axis(self) -> int:
        """Axis the network output (and the labels) are packed on."""
        return 1 - weight_axis(self.n_layers)


@dataclass
class PlainModel:
    spec: NetworkSpec
    weights: list
    biases: list
    act: ActivationPoly

    def copy(self) -> PlainModel:
        return PlainModel(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.act)

    def params_vector(self) -> np.ndarray:
        return np.concatenate([np.concatenate([w.ravel(), b]) for w, b in zip(self.weights, self.biases)])

    def with_params_vector(self, theta: np.ndarray) -> PlainModel:
        ws, bs, pos = [], [], 0
        for w, b in zip(self.weights, self.biases):
            ws.append(np.array(theta[pos : pos + w.size]).reshape(w.shape))
            pos += w.size
            bs.append(np.array(theta[pos : pos + b.size]))
            pos += b.size
        return PlainModel(self.spec, ws, bs, self.act)


@dataclass(frozen=True)
class EncryptedLayer:
    W: Ciphertext
    b: Ciphertext
    axis: int
    in_dim: int
    out_dim: int

    @property
    def bias_axis(self) -> int:
        return 1 - self.axis


@dataclass(frozen=True)
class EncryptedModel:
    spec: NetworkSpec
    layers: tuple
    act: ActivationPoly
    ctx: HEContext = field(compare=False)

    def out_layout(self, k: int) -> PackedLayout:
        """Layout of the output of layer ``k`` (1-based)."""
        layer = self.layers[k - 1]
        p = self.ctx.params
        return PackedLayout.vector(layer.out_dim, 1 - layer.axis, p.slot_size, p.ct_size)

    def in_layout(self) -> PackedLayout:
        p = self.ctx.params
        return PackedLayout.vector(self.spec.dims[0], 0, p.slot_size, p.ct_size)

    def levels(self) -> list[tuple[int, int]]:
        return [(layer.W.level, layer.b.level) for layer in self.layers]

    def replace_layers(self, layers) -> EncryptedModel:
        return EncryptedModel(self.spec, tuple(layers), self.act, self.ctx)


def init_model(spec: NetworkSpec, seed: int, S: int = 32, act: ActivationPoly | None = None) -> PlainModel:
    """Glorot-uniform weights, zero biases."""
    spec.check_capacity(S)
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for layer in spec.layers:
        limit = np.sqrt(6.0 / (layer.in_dim + layer.out_dim))
        weights.append(rng.uniform(-limit, limit, size=(layer.out_dim, layer.in_dim)))
        biases.append(np.zeros(layer.out_dim))
    return PlainModel(spec, weights, biases, act if act is not None else spec.activation())


def encrypt_model(m: PlainModel, pk: PublicKey, ctx: HEContext, audit: bool = True) -> EncryptedModel:
    """Pack and encrypt every layer. With ``audit`` the level budget is
    checked against one full train step first (raises ``DepthBudgetError``).
    """
    p = ctx.params
    m.spec.check_capacity(p.slot_size)
    if audit:
        from .audit import check_depth_budget

        check_depth_budget(m.spec, p, m.act)
    layers = []
    for k, (W, b) in enumerate(zip(m.weights, m.biases), start=1):
        axis = weight_axis(k)
        W_ct = ctx.encrypt(pk, pack2d(W, axis, p.slot_size, p.ct_size))
        b_ct = ctx.encrypt(pk, pack1d(b, 1 - axis, p.slot_size, p.ct_size))
        layers.append(EncryptedLayer(W_ct, b_ct, axis, W.shape[1], W.shape[0]))
    return EncryptedModel(m.spec, tuple(layers), m.act, ctx)


def decrypt_model(sk: SecretKey, em: EncryptedModel) -> PlainModel:
    p = em.ctx.params
    weights, biases = [], []
    for layer in em.layers:
        wl = PackedLayout.matrix(layer.out_dim, layer.in_dim, layer.axis, p.slot_size, p.ct_size)
        bl = PackedLayout.vector(layer.out_dim, layer.bias_axis, p.slot_size, p.ct_size)
        weights.append(unpack2d(em.ctx.decrypt(sk, layer.W), wl))
        biases.append(unpack1d(em.ctx.decrypt(sk, layer.b), bl))
    return PlainModel(em.spec, weights, biases, em.act)


def check_compatible(a: EncryptedModel, b: EncryptedModel):
    if a.spec != b.spec:
        raise IncompatibleError("models have different network specs")
    for la, lb in zip(a.layers, b.layers):
        if la.axis != lb.axis or (la.in_dim, la.out_dim) != (lb.in_dim, lb.out_dim):
            raise LayoutError("models have different layer layouts")
