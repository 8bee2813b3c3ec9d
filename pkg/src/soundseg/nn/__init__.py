from soundseg.nn.adam import AdamState, adam_init, adam_step
from soundseg.nn.unet import (
    LossKind,
    UNetConfig,
    backward,
    init_params,
    loss_and_grads,
    param_shapes,
    unet_forward,
)

__all__ = [
    "AdamState",
    "LossKind",
    "UNetConfig",
    "adam_init",
    "adam_step",
    "backward",
    "init_params",
    "loss_and_grads",
    "param_shapes",
    "unet_forward",
]
