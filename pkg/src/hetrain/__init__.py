"""Neural network training and inference over SIMD-packed homomorphic ciphertexts.

The cipher backend is a simulation: it tracks slot values, multiplicative
levels and key ownership exactly, and can add Gaussian noise, but it offers
no cryptographic security.
"""

from .activation import ActivationPoly, cheb_fit_silu
from .cipher import (
    Ciphertext,
    HEContext,
    HEParams,
    PublicKey,
    SecretKey,
    ct_deserialize,
    ct_serialize,
    key_deserialize,
    key_serialize,
)
from .config import TrainConfig, load_config, parse_config
from .data import (
    Dataset,
    EncryptedDataset,
    MetricsReport,
    decrypt_dataset,
    encrypt_dataset,
    evaluate,
    load_csv,
    preprocess,
    synth_generate,
)
from .errors import HEError, LevelExhaustedError
from .packing import PackedLayout, he_matvec, pack1d, pack2d, sum_cols, sum_rows, unpack1d, unpack2d

__version__ = "0.1.0"

__all__ = [
    "ActivationPoly",
    "Ciphertext",
    "Dataset",
    "EncryptedDataset",
    "HEContext",
    "HEError",
    "HEParams",
    "LevelExhaustedError",
    "MetricsReport",
    "PackedLayout",
    "PublicKey",
    "SecretKey",
    "TrainConfig",
    "cheb_fit_silu",
    "ct_deserialize",
    "ct_serialize",
    "decrypt_dataset",
    "encrypt_dataset",
    "evaluate",
    "he_matvec",
    "key_deserialize",
    "key_serialize",
    "load_config",
    "load_csv",
    "pack1d",
    "pack2d",
    "parse_config",
    "preprocess",
    "sum_cols",
    "sum_rows",
    "synth_generate",
    "unpack1d",
    "unpack2d",
]
