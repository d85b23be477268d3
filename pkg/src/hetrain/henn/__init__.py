"""Encrypted multilayer perceptron trained with SIMD-packed homomorphic ops."""

from .audit import check_depth_budget, required_level_budget
from .encrypted import (
    Activations,
    RoundRecord,
    accumulate,
    backward,
    decrypt_round_loss,
    forward,
    loss_grad,
    mse_loss,
    round_order,
    sgd_update,
    train,
    train_round,
    train_step,
)
from .model import (
    EncryptedLayer,
    EncryptedModel,
    LayerSpec,
    NetworkSpec,
    PlainModel,
    bias_axis,
    decrypt_model,
    encrypt_model,
    init_model,
    weight_axis,
)
from .plain import plain_forward, plain_grads, plain_loss, plain_output, plain_sgd_step, plain_train, predict_plain

__all__ = [
    "Activations",
    "EncryptedLayer",
    "EncryptedModel",
    "LayerSpec",
    "NetworkSpec",
    "PlainModel",
    "RoundRecord",
    "accumulate",
    "backward",
    "decrypt_round_loss",
    "bias_axis",
    "check_depth_budget",
    "decrypt_model",
    "encrypt_model",
    "forward",
    "init_model",
    "loss_grad",
    "mse_loss",
    "plain_forward",
    "plain_grads",
    "plain_loss",
    "plain_output",
    "plain_sgd_step",
    "plain_train",
    "predict_plain",
    "required_level_budget",
    "round_order",
    "sgd_update",
    "train",
    "train_round",
    "train_step",
    "weight_axis",
]
