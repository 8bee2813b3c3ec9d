"""Layer primitives with hand-written backward passes.

Public functions take NHWC arrays ``(batch, height, width, channels)``. The
U-Net runs on the ``*_cf`` cores, which use a channel-first ``(C, B, H, W)``
layout so im2col copies whole rows and convs run as cache-sized GEMM chunks.

Conv kernels are ``(kh, kw, in_channels, out_channels)``. Transposed conv
kernels are ``(kh, kw, out_channels, in_channels)``: the same array as the
strided convolution they are the adjoint of.
"""

import numpy as np

__all__ = [
    "conv2d",
    "conv2d_backward",
    "conv2d_transpose",
    "conv2d_transpose_backward",
    "maxpool2d",
    "maxpool2d_backward",
    "relu",
    "relu_backward",
    "concat_channels",
    "split_channels",
    "mae",
    "mse",
    "loss",
]


def to_cf(x):
    return np.ascontiguousarray(x.transpose(3, 0, 1, 2))


def to_nhwc(x):
    return np.ascontiguousarray(x.transpose(1, 2, 3, 0))


def _check4(x, name="input"):
    if np.ndim(x) != 4:
        raise ValueError(f"{name} must be 4-D (batch, height, width, channels), got {np.shape(x)}")


def _padding(kernel_size, padding):
    if padding == "same":
        if kernel_size % 2 == 0:
            raise ValueError("'same' padding needs an odd kernel size")
        return kernel_size // 2
    if padding == "valid":
        return 0
    raise ValueError(f"padding must be 'same' or 'valid', got {padding!r}")


def _conv_geometry(x_shape, kernel, bias, stride, padding):
    kh, kw, cin, cout = kernel.shape
    if kh != kw:
        raise ValueError("only square kernels are supported")
    if x_shape[0] != cin:
        raise ValueError(f"input has {x_shape[0]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    pad = _padding(kh, padding)
    h, w = x_shape[2], x_shape[3]
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (w + 2 * pad - kw) // stride + 1
    if ho < 1 or wo < 1:
        raise ValueError(f"kernel {kh}x{kw} does not fit input {h}x{w}")
    return pad, ho, wo


def _pad_cf(x, pad):
    if not pad:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


_CHUNK_FLOATS = 1 << 17


def _row_block(c, k, wo):
    # output rows per chunk so one im2col buffer stays cache resident
    return max(1, _CHUNK_FLOATS // (c * k * k * wo))


def _kernel_matrix(kernel):
    # (kh, kw, cin, cout) -> (cout, cin * kh * kw), matching im2col row order
    return kernel.transpose(3, 2, 0, 1).reshape(kernel.shape[3], -1)


def _chunks(b, ho, rows):
    for n in range(b):
        for r in range(0, ho, rows):
            yield n, r, min(rows, ho - r)


def _fill_cols(cols, xp, n, r, rows, k, stride, wo):
    for i in range(k):
        top = r * stride + i
        for j in range(k):
            cols[:, i, j, :rows] = xp[:, n, top : top + stride * rows : stride, j : j + stride * wo : stride]


def conv2d_cf(x, kernel, bias, stride=1, padding="same"):
    pad, ho, wo = _conv_geometry(x.shape, kernel, bias, stride, padding)
    k, _, cin, cout = kernel.shape
    b = x.shape[1]
    kmat = _kernel_matrix(kernel)
    if k == 1 and stride == 1:
        out = kmat @ x.reshape(cin, -1)
        out += bias[:, None]
        return out.reshape(cout, b, ho, wo)
    xp = _pad_cf(x, pad)
    out = np.empty((cout, b, ho, wo), dtype=np.result_type(x, kernel))
    rows = _row_block(cin, k, wo)
    cols = np.empty((cin, k, k, min(rows, ho), wo), dtype=x.dtype)
    for n, r, m in _chunks(b, ho, rows):
        _fill_cols(cols, xp, n, r, m, k, stride, wo)
        c2 = cols[:, :, :, :m].reshape(cin * k * k, m * wo)
        out[:, n, r : r + m] = (kmat @ c2).reshape(cout, m, wo)
    out += bias[:, None, None, None]
    return out


def conv2d_backward_cf(dout, x, kernel, stride=1, padding="same"):
    k, _, cin, cout = kernel.shape
    pad = _padding(k, padding)
    _, b, h, w = x.shape
    ho, wo = dout.shape[2], dout.shape[3]
    kmat = _kernel_matrix(kernel)
    dbias = dout.reshape(cout, -1).sum(axis=1)
    if k == 1 and stride == 1:
        d2 = dout.reshape(cout, -1)
        dk = d2 @ x.reshape(cin, -1).T
        dx = (kmat.T @ d2).reshape(x.shape)
        return dx, dk.T.reshape(kernel.shape), dbias
    xp = _pad_cf(x, pad)
    # stride-1 'same': the input gradient is a conv with the flipped kernel
    fast_dx = stride == 1 and 2 * pad == k - 1
    dtype = np.result_type(dout, kernel)
    dxp = None if fast_dx else np.zeros(xp.shape, dtype=dtype)
    dkmat = np.zeros_like(kmat, dtype=dtype)
    rows = _row_block(cin, k, wo)
    cols = np.empty((cin, k, k, min(rows, ho), wo), dtype=x.dtype)
    for n, r, m in _chunks(b, ho, rows):
        _fill_cols(cols, xp, n, r, m, k, stride, wo)
        c2 = cols[:, :, :, :m].reshape(cin * k * k, m * wo)
        d2 = dout[:, n, r : r + m].reshape(cout, m * wo)
        dkmat += d2 @ c2.T
        if fast_dx:
            continue
        dcols = (kmat.T @ d2).reshape(cin, k, k, m, wo)
        for i in range(k):
            top = r * stride + i
            for j in range(k):
                dxp[:, n, top : top + stride * m : stride, j : j + stride * wo : stride] += dcols[:, i, j]
    dk = dkmat.reshape(cout, cin, k, k).transpose(2, 3, 1, 0)
    if fast_dx:
        flipped = np.ascontiguousarray(kernel[::-1, ::-1].transpose(0, 1, 3, 2))
        dx = conv2d_cf(dout, flipped, np.zeros(cin, dtype=dtype))
    else:
        dx = dxp[:, :, pad : pad + h, pad : pad + w] if pad else dxp
    return dx, np.ascontiguousarray(dk), dbias


def conv2d_transpose_cf(x, kernel, bias, stride=2):
    kh, kw, cout, cin = kernel.shape
    if x.shape[0] != cin:
        raise ValueError(f"input has {x.shape[0]} channels, kernel expects {cin}")
    if bias.shape != (cout,):
        raise ValueError(f"bias shape {bias.shape} != ({cout},)")
    _, b, h, w = x.shape
    kmat = kernel.transpose(2, 0, 1, 3).reshape(cout * kh * kw, cin)
    contrib = (kmat @ x.reshape(cin, -1)).reshape(cout, kh, kw, b, h, w)
    ho, wo = (h - 1) * stride + kh, (w - 1) * stride + kw
    if stride == kh == kw:
        # taps do not overlap: interleave
        out = contrib.transpose(0, 3, 4, 1, 5, 2).reshape(cout, b, ho, wo)
    else:
        out = np.zeros((cout, b, ho, wo), dtype=contrib.dtype)
        for i in range(kh):
            for j in range(kw):
                out[:, :, i : i + stride * h : stride, j : j + stride * w : stride] += contrib[:, i, j]
    out += bias[:, None, None, None]
    return out


def conv2d_transpose_backward_cf(dout, x, kernel, stride=2):
    kh, kw, cout, cin = kernel.shape
    _, b, h, w = x.shape
    if stride == kh == kw:
        dcontrib = dout.reshape(cout, b, h, kh, w, kw).transpose(0, 3, 5, 1, 2, 4)
    else:
        dcontrib = np.empty((cout, kh, kw, b, h, w), dtype=dout.dtype)
        for i in range(kh):
            for j in range(kw):
                dcontrib[:, i, j] = dout[:, :, i : i + stride * h : stride, j : j + stride * w : stride]
    dcontrib = dcontrib.reshape(cout * kh * kw, -1)
    kmat = kernel.transpose(2, 0, 1, 3).reshape(cout * kh * kw, cin)
    x2 = x.reshape(cin, -1)
    dx = (kmat.T @ dcontrib).reshape(x.shape)
    dk = (dcontrib @ x2.T).reshape(cout, kh, kw, cin).transpose(1, 2, 0, 3)
    return dx, np.ascontiguousarray(dk), dout.reshape(cout, -1).sum(axis=1)


def maxpool2d_cf(x, pool=2):
    c, b, h, w = x.shape
    if h % pool or w % pool:
        raise ValueError(f"spatial dims {h}x{w} not divisible by pool size {pool}")
    ho, wo = h // pool, w // pool
    blocks = x.reshape(c, b, ho, pool, wo, pool).transpose(0, 1, 2, 4, 3, 5).reshape(c, b, ho, wo, pool * pool)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]
    return out, idx


def maxpool2d_backward_cf(dout, idx, pool=2):
    c, b, ho, wo = dout.shape
    dblocks = np.zeros((c, b, ho, wo, pool * pool), dtype=dout.dtype)
    np.put_along_axis(dblocks, idx[..., None], dout[..., None], axis=-1)
    return dblocks.reshape(c, b, ho, wo, pool, pool).transpose(0, 1, 2, 4, 3, 5).reshape(c, b, ho * pool, wo * pool)


# NHWC public surface


def conv2d(x, kernel, bias, stride=1, padding="same"):
    """Cross-correlation with zero padding ("same" keeps spatial dims at stride 1)."""
    _check4(x)
    return to_nhwc(conv2d_cf(to_cf(x), kernel, bias, stride, padding))


def conv2d_backward(dout, x, kernel, stride=1, padding="same"):
    """Gradients ``(dx, dkernel, dbias)`` of :func:`conv2d` given its input."""
    dx, dk, db = conv2d_backward_cf(to_cf(dout), to_cf(x), kernel, stride, padding)
    return to_nhwc(dx), dk, db


def conv2d_transpose(x, kernel, bias, stride=2):
    """Transposed convolution; output is ``(H - 1) * stride + k`` (2x for k = stride = 2)."""
    _check4(x)
    return to_nhwc(conv2d_transpose_cf(to_cf(x), kernel, bias, stride))


def conv2d_transpose_backward(dout, x, kernel, stride=2):
    dx, dk, db = conv2d_transpose_backward_cf(to_cf(dout), to_cf(x), kernel, stride)
    return to_nhwc(dx), dk, db


def maxpool2d(x, pool=2):
    """Non-overlapping max pooling; returns ``(out, argmax)``.

    Ties go to the first position of the block in row-major order, and the
    backward pass routes the whole gradient there.
    """
    _check4(x)
    out, idx = maxpool2d_cf(to_cf(x), pool)
    return to_nhwc(out), idx


def maxpool2d_backward(dout, idx, pool=2):
    return to_nhwc(maxpool2d_backward_cf(to_cf(dout), idx, pool))


def relu(x):
    return np.maximum(x, 0)


def relu_backward(dout, out):
    return dout * (out > 0)


def concat_channels(a, b):
    """Stack along channels; ``a`` takes the leading channels."""
    _check4(a, "a")
    _check4(b, "b")
    if a.shape[:3] != b.shape[:3]:
        raise ValueError(f"batch/spatial dims differ: {a.shape} vs {b.shape}")
    return np.concatenate([a, b], axis=3)


def split_channels(d, n_first):
    return d[..., :n_first], d[..., n_first:]


def mae(pred, target):
    """Mean absolute error and its gradient (zero at the kink)."""
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def mse(pred, target):
    if pred.shape != target.shape:
        raise ValueError(f"prediction shape {pred.shape} != target shape {target.shape}")
    diff = pred - target
    return float(np.mean(diff * diff)), 2.0 * diff / diff.size


def loss(kind, pred, target):
    """Dispatch on a ``LossKind`` or its string value."""
    name = getattr(kind, "value", kind)
    if name == "mae":
        return mae(pred, target)
    if name == "mse":
        return mse(pred, target)
    raise ValueError(f"unknown loss {kind!r}; expected 'mae' or 'mse'")
