"""U-Net regressor over magnitude patches.

Encoder level ``l`` applies two 3x3 conv+ReLU layers with ``base * 2**l``
filters and a 2x2 max-pool; a bottleneck of two more convs follows. Each
decoder level upsamples with a 2x2 stride-2 transposed conv, concatenates the
matching encoder output (upsampled features first) and applies two conv+ReLU
layers. A 1x1 conv with linear activation maps back to one channel.
"""

import enum
from dataclasses import asdict, dataclass

import numpy as np

from soundseg import PATCH_FREQ, PATCH_TIME
from soundseg.nn import layers

__all__ = [
    "LossKind",
    "UNetConfig",
    "init_params",
    "param_shapes",
    "unet_forward",
    "forward_with_cache",
    "backward_from_cache",
    "backward",
    "loss_and_grads",
]


class LossKind(enum.Enum):
    MAE = "mae"
    MSE = "mse"


@dataclass(frozen=True)
class UNetConfig:
    depth: int = 4
    base_filters: int = 16
    kernel_size: int = 3
    pool_size: int = 2
    input_shape: tuple = (PATCH_FREQ, PATCH_TIME, 1)

    def __post_init__(self):
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        if self.depth < 1 or self.base_filters < 1:
            raise ValueError(f"depth and base_filters must be >= 1, got {self.depth}, {self.base_filters}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ValueError(f"kernel_size must be odd, got {self.kernel_size}")
        if len(self.input_shape) != 3:
            raise ValueError(f"input_shape must be (height, width, channels), got {self.input_shape}")
        h, w, _ = self.input_shape
        factor = self.pool_size**self.depth
        if h % factor or w % factor:
            raise ValueError(f"input {h}x{w} is not divisible by pool_size**depth = {factor}")

    def to_dict(self):
        d = asdict(self)
        d["input_shape"] = list(self.input_shape)
        return d


def param_shapes(config):
    """Ordered ``name -> shape`` mapping of every trainable tensor."""
    k = config.kernel_size
    p = config.pool_size
    shapes = {}
    cin = config.input_shape[2]
    for level in range(config.depth):
        f = config.base_filters * 2**level
        shapes[f"enc{level}_conv0_kernel"] = (k, k, cin, f)
        shapes[f"enc{level}_conv0_bias"] = (f,)
        shapes[f"enc{level}_conv1_kernel"] = (k, k, f, f)
        shapes[f"enc{level}_conv1_bias"] = (f,)
        cin = f
    f = config.base_filters * 2**config.depth
    shapes["bottleneck_conv0_kernel"] = (k, k, cin, f)
    shapes["bottleneck_conv0_bias"] = (f,)
    shapes["bottleneck_conv1_kernel"] = (k, k, f, f)
    shapes["bottleneck_conv1_bias"] = (f,)
    cin = f
    for level in reversed(range(config.depth)):
        f = config.base_filters * 2**level
        shapes[f"dec{level}_up_kernel"] = (p, p, f, cin)
        shapes[f"dec{level}_up_bias"] = (f,)
        shapes[f"dec{level}_conv0_kernel"] = (k, k, 2 * f, f)
        shapes[f"dec{level}_conv0_bias"] = (f,)
        shapes[f"dec{level}_conv1_kernel"] = (k, k, f, f)
        shapes[f"dec{level}_conv1_bias"] = (f,)
        cin = f
    shapes["head_kernel"] = (1, 1, cin, config.input_shape[2])
    shapes["head_bias"] = (config.input_shape[2],)
    return shapes


def init_params(config, seed=0, dtype=np.float32):
    """He-style uniform fan-in init for kernels; zero biases."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(config).items():
        if name.endswith("_bias"):
            params[name] = np.zeros(shape, dtype=dtype)
            continue
        if "_up_" in name:
            fan_in = shape[0] * shape[1] * shape[3]
        else:
            fan_in = shape[0] * shape[1] * shape[2]
        limit = np.sqrt(6.0 / fan_in)
        params[name] = rng.uniform(-limit, limit, size=shape).astype(dtype)
    return params


def _check_batch(config, batch):
    if batch.ndim != 4 or batch.shape[1:] != config.input_shape:
        raise ValueError(f"batch shape {batch.shape} does not match config input (B, {config.input_shape})")


def _conv_relu(x, params, name, cache):
    out = layers.relu(layers.conv2d_cf(x, params[f"{name}_kernel"], params[f"{name}_bias"]))
    cache.append(("conv_relu", name, x, out))
    return out


def forward_with_cache(config, params, batch):
    """Forward pass that also returns what :func:`backward_from_cache` needs.

    Activations are kept channel-first internally; the returned prediction is
    NHWC like ``batch``.
    """
    _check_batch(config, batch)
    cache = []
    skips = []
    x = layers.to_cf(batch)
    for level in range(config.depth):
        x = _conv_relu(x, params, f"enc{level}_conv0", cache)
        x = _conv_relu(x, params, f"enc{level}_conv1", cache)
        skips.append(x)
        x, idx = layers.maxpool2d_cf(x, config.pool_size)
        cache.append(("pool", level, idx, None))
    x = _conv_relu(x, params, "bottleneck_conv0", cache)
    x = _conv_relu(x, params, "bottleneck_conv1", cache)
    for level in reversed(range(config.depth)):
        name = f"dec{level}_up"
        up = layers.conv2d_transpose_cf(x, params[f"{name}_kernel"], params[f"{name}_bias"], config.pool_size)
        cache.append(("up", name, x, None))
        x = np.concatenate([up, skips[level]], axis=0)
        cache.append(("concat", level, up.shape[0], None))
        x = _conv_relu(x, params, f"dec{level}_conv0", cache)
        x = _conv_relu(x, params, f"dec{level}_conv1", cache)
    out = layers.conv2d_cf(x, params["head_kernel"], params["head_bias"], padding="valid")
    cache.append(("head", "head", x, None))
    return layers.to_nhwc(out), cache


def unet_forward(config, params, batch):
    """Map a (B, H, W, 1) batch to an equally shaped prediction."""
    out, _ = forward_with_cache(config, params, batch)
    return out


def backward_from_cache(config, params, cache, dout):
    """Reverse-mode sweep over a forward cache; returns ``name -> gradient``."""
    grads = {}
    skip_grads = {}
    d = layers.to_cf(dout)
    for kind, key, saved, extra in reversed(cache):
        if kind == "head":
            d, grads["head_kernel"], grads["head_bias"] = layers.conv2d_backward_cf(
                d, saved, params["head_kernel"], padding="valid"
            )
        elif kind == "conv_relu":
            d = layers.relu_backward(d, extra)
            d, grads[f"{key}_kernel"], grads[f"{key}_bias"] = layers.conv2d_backward_cf(
                d, saved, params[f"{key}_kernel"]
            )
        elif kind == "concat":
            d, skip_grads[key] = d[:saved], d[saved:]
        elif kind == "up":
            d, grads[f"{key}_kernel"], grads[f"{key}_bias"] = layers.conv2d_transpose_backward_cf(
                d, saved, params[f"{key}_kernel"], config.pool_size
            )
        elif kind == "pool":
            d = layers.maxpool2d_backward_cf(d, saved, config.pool_size) + skip_grads.pop(key)
    return {name: grads[name] for name in params}


def loss_and_grads(config, params, batch, target, kind):
    pred, cache = forward_with_cache(config, params, batch)
    value, dpred = layers.loss(kind, pred, target)
    return value, backward_from_cache(config, params, cache, dpred)


def backward(config, params, batch, target, kind):
    """Exact gradients of ``loss(kind, unet_forward(batch), target)`` per parameter."""
    return loss_and_grads(config, params, batch, target, kind)[1]
