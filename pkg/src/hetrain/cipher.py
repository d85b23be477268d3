"""SIMD ciphertext core: parameters, keys, ciphertexts and the reference backend.

The reference backend keeps the ``B`` slot values as binary64 reals and
tracks a multiplicative level per ciphertext. Key material only provides
access control (fingerprint matching); it is not confidential. A lattice
backend can replace :class:`HEContext` without changing callers.
"""

from __future__ import annotations

import hashlib
import math
import secrets
import struct
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import _kernels
from .errors import (
    CapacityError,
    CorruptCiphertextError,
    FormatError,
    IncompatibleError,
    KeyMismatchError,
    LevelExhaustedError,
    ParameterError,
)

CT_MAGIC = b"HESIMD1"
CT_VERSION = 1
CT_HEADER = struct.Struct("<7sBBIII16s")
KEY_MAGIC = b"HEKEY001"
KEY_HEADER = struct.Struct("<8sBIIIId16s")
REFERENCE_BACKEND = 1


@dataclass(frozen=True)
class HEParams:
    ring_dim: int = 2**11
    ct_size: int = 2**10
    slot_size: int = 32
    level_budget: int = 30
    noise_sigma: float = 0.0

    def __post_init__(self):
        R, B, S = self.ring_dim, self.ct_size, self.slot_size
        if R < 2 or R & (R - 1):
            raise ParameterError(f"ring_dim must be a power of two, got {R}")
        if B != R // 2:
            raise ParameterError(f"ct_size must equal ring_dim/2 = {R // 2}, got {B}")
        if S != math.isqrt(B):
            raise ParameterError(f"slot_size must equal floor(sqrt({B})) = {math.isqrt(B)}, got {S}")
        if B % S:
            raise ParameterError(f"slot_size {S} does not divide ct_size {B}")
        if self.level_budget < 1:
            raise ParameterError("level_budget must be >= 1")
        if not self.noise_sigma >= 0:
            raise ParameterError("noise_sigma must be >= 0")

    @classmethod
    def from_ring_dim(cls, ring_dim: int, level_budget: int = 30, noise_sigma: float = 0.0) -> HEParams:
        B = ring_dim // 2
        return cls(ring_dim, B, math.isqrt(B), level_budget, noise_sigma)

    @property
    def n_segments(self) -> int:
        return self.ct_size // self.slot_size

    @property
    def fingerprint(self) -> bytes:
        raw = struct.pack("<IIII", self.ring_dim, self.ct_size, self.slot_size, self.level_budget)
        return hashlib.blake2b(raw, digest_size=8, person=b"hetrain-par").digest()


def _key_fingerprint(token: bytes, params: HEParams) -> bytes:
    return hashlib.blake2b(token + params.fingerprint, digest_size=16, person=b"hetrain-key").digest()


@dataclass(frozen=True)
class SecretKey:
    token: bytes
    params: HEParams

    @property
    def fingerprint(self) -> bytes:
        return _key_fingerprint(self.token, self.params)


@dataclass(frozen=True)
class PublicKey:
    fingerprint: bytes
    params: HEParams


class Ciphertext:
    """Immutable ciphertext value bound to a context.

    Supports ``+``, ``-`` and ``*`` (ciphertext or plaintext operand) as
    shorthands for the context operations.
    """

    __slots__ = ("slots", "level", "key_fingerprint", "ctx")

    def __init__(self, slots: np.ndarray, level: int, key_fingerprint: bytes, ctx: HEContext):
        slots = np.array(slots, dtype=np.float64)
        slots.flags.writeable = False
        object.__setattr__(self, "slots", slots)
        object.__setattr__(self, "level", int(level))
        object.__setattr__(self, "key_fingerprint", bytes(key_fingerprint))
        object.__setattr__(self, "ctx", ctx)

    def __setattr__(self, name, value):
        raise AttributeError("Ciphertext is immutable")

    @property
    def params(self) -> HEParams:
        return self.ctx.params

    def __eq__(self, other):
        if not isinstance(other, Ciphertext):
            return NotImplemented
        return (
            self.level == other.level
            and self.key_fingerprint == other.key_fingerprint
            and self.params.fingerprint == other.params.fingerprint
            and self.slots.tobytes() == other.slots.tobytes()
        )

    __hash__ = None

    def __repr__(self):
        return f"Ciphertext(B={self.slots.shape[0]}, level={self.level}, key={self.key_fingerprint.hex()[:8]})"

    def __add__(self, other):
        return self.ctx.add(self, other)

    def __sub__(self, other):
        return self.ctx.sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Ciphertext):
            return self.ctx.mult(self, other)
        return self.ctx.mult_plain(self, other)

    __rmul__ = __mul__


class HEContext:
    """Reference SIMD backend for one parameter set.

    Owns the RNG used for the optional Gaussian slot noise. Noise is added on
    encrypt, mult, mult_plain, rotate, rotate_sum, poly_eval and bootstrap;
    add and sub are exact.
    """

    backend_id = REFERENCE_BACKEND

    def __init__(self, params: HEParams | None = None, noise_seed: int | None = None):
        self.params = params if params is not None else HEParams()
        self._rng = np.random.default_rng(noise_seed)

    def __repr__(self):
        p = self.params
        return f"HEContext(R={p.ring_dim}, B={p.ct_size}, S={p.slot_size}, L={p.level_budget})"

    # keys

    def sk_gen(self, rng: np.random.Generator | None = None) -> SecretKey:
        token = secrets.token_bytes(16) if rng is None else rng.bytes(16)
        return SecretKey(token, self.params)

    def pk_gen(self, sk: SecretKey) -> PublicKey:
        if not isinstance(sk, SecretKey) or len(sk.token) != 16:
            raise KeyMismatchError("malformed secret key")
        return PublicKey(sk.fingerprint, sk.params)

    def keygen(self, rng: np.random.Generator | None = None) -> tuple[SecretKey, PublicKey]:
        sk = self.sk_gen(rng)
        return sk, self.pk_gen(sk)

    # encryption

    def _noisy(self, slots: np.ndarray) -> np.ndarray:
        sigma = self.params.noise_sigma
        if sigma > 0:
            return slots + self._rng.normal(0.0, sigma, slots.shape[0])
        return slots

    def _wrap(self, slots, level, fingerprint) -> Ciphertext:
        return Ciphertext(slots, level, fingerprint, self)

    def encrypt(self, pk: PublicKey, v: Sequence[float] | np.ndarray) -> Ciphertext:
        if pk.params.fingerprint != self.params.fingerprint:
            raise IncompatibleError("public key was generated for other parameters")
        v = np.asarray(v, dtype=np.float64).ravel()
        B = self.params.ct_size
        if v.shape[0] > B:
            raise CapacityError(f"vector of length {v.shape[0]} exceeds ciphertext size {B}")
        slots = np.zeros(B)
        slots[: v.shape[0]] = v
        return self._wrap(self._noisy(slots), self.params.level_budget, pk.fingerprint)

    def decrypt(self, sk: SecretKey, c: Ciphertext) -> np.ndarray:
        if sk.fingerprint != c.key_fingerprint:
            raise KeyMismatchError("secret key does not match ciphertext")
        if c.level < 0:
            raise CorruptCiphertextError(f"ciphertext level {c.level} < 0")
        return np.array(c.slots)

    # arithmetic

    def _check_pair(self, c1: Ciphertext, c2: Ciphertext):
        if c1.params.fingerprint != c2.params.fingerprint or c1.ctx.backend_id != c2.ctx.backend_id:
            raise IncompatibleError("ciphertexts belong to different parameter sets")
        if c1.key_fingerprint != c2.key_fingerprint:
            raise IncompatibleError("ciphertexts encrypted under different keys")

    @staticmethod
    def _require(op: str, level: int, need: int):
        if level < need:
            raise LevelExhaustedError(op, level, need)

    def _plain(self, p) -> np.ndarray | float:
        if np.isscalar(p):
            return float(p)
        p = np.asarray(p, dtype=np.float64).ravel()
        B = self.params.ct_size
        if p.shape[0] > B:
            raise CapacityError(f"plaintext of length {p.shape[0]} exceeds ciphertext size {B}")
        if p.shape[0] < B:
            p = np.concatenate([p, np.zeros(B - p.shape[0])])
        return p

    def add(self, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
        self._check_pair(c1, c2)
        return self._wrap(c1.slots + c2.slots, min(c1.level, c2.level), c1.key_fingerprint)

    def sub(self, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
        self._check_pair(c1, c2)
        return self._wrap(c1.slots - c2.slots, min(c1.level, c2.level), c1.key_fingerprint)

    def add_many(self, cts: Sequence[Ciphertext]) -> Ciphertext:
        """Left-to-right ``add`` chain over a non-empty sequence."""
        acc = cts[0]
        for c in cts[1:]:
            acc = self.add(acc, c)
        return acc

    def mult(self, c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
        self._check_pair(c1, c2)
        level = min(c1.level, c2.level)
        self._require("mult", level, 1)
        return self._wrap(self._noisy(c1.slots * c2.slots), level - 1, c1.key_fingerprint)

    def square(self, c: Ciphertext) -> Ciphertext:
        return self.mult(c, c)

    def mult_plain(self, c: Ciphertext, p) -> Ciphertext:
        self._require("mult_plain", c.level, 1)
        return self._wrap(self._noisy(c.slots * self._plain(p)), c.level - 1, c.key_fingerprint)

    def rotate(self, c: Ciphertext, k: int) -> Ciphertext:
        k = int(k) % self.params.ct_size
        if k == 0:
            return c
        return self._wrap(self._noisy(np.roll(c.slots, -k)), c.level, c.key_fingerprint)

    def rotate_sum(self, c: Ciphertext, step: int, count: int) -> Ciphertext:
        """``sum(rotate(c, j * step) for j in range(count))`` as a log-depth rotate-and-add network."""
        if count < 1:
            raise ValueError("count must be >= 1")
        B = self.params.ct_size
        out = _kernels.rotsum(np.asarray(c.slots), int(step) % B, int(count))
        return self._wrap(self._noisy(out), c.level, c.key_fingerprint)

    def poly_eval(self, c: Ciphertext, coeffs: np.ndarray, const_mask: np.ndarray, cost: int, need: int) -> Ciphertext:
        """Slot-wise monomial polynomial via the balanced power tree.

        ``const_mask`` selects the slots that receive the constant term.
        ``cost`` is the depth of the tree plus the coefficient multiply.
        """
        self._require("poly_eval", c.level, need)
        coeffs = np.ascontiguousarray(coeffs, dtype=np.float64)
        mask = np.ascontiguousarray(self._plain(const_mask) if not np.isscalar(const_mask)
                                    else np.full(self.params.ct_size, float(const_mask)))
        out = _kernels.poly_eval(np.asarray(c.slots), coeffs, mask)
        return self._wrap(self._noisy(out), c.level - cost, c.key_fingerprint)

    def bootstrap(self, c: Ciphertext) -> Ciphertext:
        return self._wrap(self._noisy(np.asarray(c.slots)), self.params.level_budget, c.key_fingerprint)


# Functional aliases over the context methods.

def sk_gen(params: HEParams, rng: np.random.Generator | None = None) -> SecretKey:
    return HEContext(params).sk_gen(rng)


def pk_gen(sk: SecretKey) -> PublicKey:
    return HEContext(sk.params).pk_gen(sk)


def he_add(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    return c1.ctx.add(c1, c2)


def he_sub(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    return c1.ctx.sub(c1, c2)


def he_mult(c1: Ciphertext, c2: Ciphertext) -> Ciphertext:
    return c1.ctx.mult(c1, c2)


def he_mult_plain(c: Ciphertext, p) -> Ciphertext:
    return c.ctx.mult_plain(c, p)


def rotate(c: Ciphertext, k: int) -> Ciphertext:
    return c.ctx.rotate(c, k)


def bootstrap(c: Ciphertext) -> Ciphertext:
    return c.ctx.bootstrap(c)


# Serialization

def ct_serialize(c: Ciphertext) -> bytes:
    p = c.params
    header = CT_HEADER.pack(CT_MAGIC, CT_VERSION, c.ctx.backend_id, p.ct_size, p.slot_size,
                            c.level, c.key_fingerprint)
    return header + np.asarray(c.slots, dtype="<f8").tobytes()


def ct_deserialize(data: bytes, ctx: HEContext) -> Ciphertext:
    if len(data) < CT_HEADER.size:
        raise FormatError(f"truncated ciphertext header ({len(data)} bytes)")
    magic, version, backend, B, S, level, fp = CT_HEADER.unpack_from(data)
    if magic != CT_MAGIC:
        raise FormatError(f"bad ciphertext magic {magic!r}")
    if version != CT_VERSION:
        raise FormatError(f"unsupported ciphertext version {version}")
    if backend != ctx.backend_id:
        raise FormatError(f"ciphertext backend {backend} != context backend {ctx.backend_id}")
    p = ctx.params
    if (B, S) != (p.ct_size, p.slot_size):
        raise IncompatibleError(f"ciphertext shape B={B}, S={S} does not match context")
    expected = CT_HEADER.size + 8 * B
    if len(data) != expected:
        raise FormatError(f"ciphertext length {len(data)} != {expected}")
    if level > p.level_budget:
        raise CorruptCiphertextError(f"level {level} above budget {p.level_budget}")
    slots = np.frombuffer(data, dtype="<f8", count=B, offset=CT_HEADER.size).astype(np.float64)
    return Ciphertext(slots, level, fp, ctx)


def key_serialize(key: SecretKey | PublicKey) -> bytes:
    p = key.params
    kind, payload = (1, key.token) if isinstance(key, SecretKey) else (2, key.fingerprint)
    return KEY_HEADER.pack(KEY_MAGIC, kind, p.ring_dim, p.ct_size, p.slot_size, p.level_budget,
                           p.noise_sigma, payload)


def key_deserialize(data: bytes) -> SecretKey | PublicKey:
    if len(data) != KEY_HEADER.size:
        raise FormatError(f"key file must be {KEY_HEADER.size} bytes, got {len(data)}")
    magic, kind, R, B, S, L, sigma, payload = KEY_HEADER.unpack(data)
    if magic != KEY_MAGIC:
        raise FormatError(f"bad key magic {magic!r}")
    params = HEParams(R, B, S, L, sigma)
    if kind == 1:
        return SecretKey(payload, params)
    if kind == 2:
        return PublicKey(payload, params)
    raise FormatError(f"unknown key kind {kind}")
