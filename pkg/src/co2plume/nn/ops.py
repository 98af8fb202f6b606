"""Differentiable ops: exactly the kernel set the surrogate network needs.

All ops take NCHW tensors, preserve dtype (float32 for training, float64 for
gradient checking), and register their backward closures via ``make_node``.
Convolution uses cross-correlation semantics with an im2col + GEMM forward;
the backward reuses the stored column matrix for the weight gradient and
scatters the input gradient back through the column map.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, grad_enabled, make_node


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _ws_buffer(workspace: dict | None, key: str, shape: tuple, dtype) -> np.ndarray:
    """Reusable scratch array; fresh allocation when no workspace is supplied."""
    if workspace is None:
        return np.empty(shape, dtype=dtype)
    buf = workspace.get(key)
    if buf is None or buf.shape != shape or buf.dtype != dtype:
        buf = np.empty(shape, dtype=dtype)
        workspace[key] = buf
    return buf


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None,
           stride: int = 1, padding: int = 0,
           workspace: dict | None = None) -> Tensor:
    """Strided cross-correlation; output (B, Cout, ceil(H/s), ceil(W/s)) for k=3, p=1.

    Internally channel-major: the im2col buffer is laid out (C*kh*kw, B*Ho*Wo)
    so forward, weight-grad, and input-grad are each one large GEMM.  An
    optional workspace dict recycles the buffers; callers passing one must
    keep at most a single differentiation graph in flight per layer.
    """
    xd = x.data
    if xd.ndim != 4:
        raise ValueError(f"conv2d expects NCHW input, got shape {xd.shape}")
    cout, cin, kh, kw = weight.data.shape
    if xd.shape[1] != cin:
        raise ValueError(
            f"conv2d channel mismatch: input {xd.shape} vs weight {weight.data.shape}")
    if stride not in (1, 2):
        raise ValueError(f"stride must be 1 or 2, got {stride}")
    b, _, h, w = xd.shape
    p = padding
    hp, wp = h + 2 * p, w + 2 * p
    ho = (hp - kh) // stride + 1
    wo = (wp - kw) // stride + 1

    xcm = _ws_buffer(workspace, "xcm", (cin, b, hp, wp), xd.dtype)
    if p:
        xcm[:, :, :p, :] = 0
        xcm[:, :, hp - p:, :] = 0
        xcm[:, :, p:hp - p, :p] = 0
        xcm[:, :, p:hp - p, wp - p:] = 0
    xcm[:, :, p:p + h, p:p + w] = xd.transpose(1, 0, 2, 3)

    cols = _ws_buffer(workspace, "cols", (cin, kh, kw, b, ho, wo), xd.dtype)
    for i in range(kh):
        hi = i + stride * (ho - 1) + 1
        for j in range(kw):
            wj = j + stride * (wo - 1) + 1
            cols[:, i, j] = xcm[:, :, i:hi:stride, j:wj:stride]
    cols2d = cols.reshape(cin * kh * kw, b * ho * wo)

    wmat = weight.data.reshape(cout, -1)
    out_cm = _ws_buffer(workspace, "out", (cout, b * ho * wo), xd.dtype)
    np.matmul(wmat, cols2d, out=out_cm)
    if bias is not None:
        out_cm += bias.data[:, None]
    out = np.ascontiguousarray(
        out_cm.reshape(cout, b, ho, wo).transpose(1, 0, 2, 3))

    def backward(g: np.ndarray):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(cout, b * ho * wo)
        if weight.requires_grad:
            weight.accumulate_grad((gm @ cols2d.T).reshape(weight.data.shape), own=True)
        if bias is not None and bias.requires_grad:
            bias.accumulate_grad(gm.sum(axis=1), own=True)
        if x.requires_grad:
            dcols = _ws_buffer(workspace, "dcols", cols2d.shape, xd.dtype)
            np.matmul(wmat.T, gm, out=dcols)
            dwin = dcols.reshape(cin, kh, kw, b, ho, wo)
            dxp = _ws_buffer(workspace, "dxp", xcm.shape, xd.dtype)
            dxp[:] = 0
            for i in range(kh):
                hi = i + stride * (ho - 1) + 1
                for j in range(kw):
                    wj = j + stride * (wo - 1) + 1
                    dxp[:, :, i:hi:stride, j:wj:stride] += dwin[:, i, j]
            # The workspace view is dead once this backward pass finishes.
            x.accumulate_grad(
                dxp[:, :, p:p + h, p:p + w].transpose(1, 0, 2, 3)
                if p else dxp.transpose(1, 0, 2, 3), own=workspace is None)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_node(out, parents, backward)


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5, inplace: bool = False) -> Tensor:
    """Per-channel batch normalization; updates running stats in place when training."""
    xd = x.data
    if inplace and not training and not grad_enabled():
        # Fused eval path: y = x*scale + shift, overwriting the (dead) input.
        scale = (gamma.data / np.sqrt(running_var + eps)).astype(xd.dtype)
        shift = (beta.data - running_mean * scale).astype(xd.dtype)
        xd *= scale[None, :, None, None]
        xd += shift[None, :, None, None]
        return make_node(xd, (), None)
    b, c, h, w = xd.shape
    n = b * h * w
    if training:
        if n <= 1:
            raise ValueError("batchnorm in train mode needs more than one value per channel")
        mean = xd.mean(axis=(0, 2, 3))
        var = xd.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mean
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mean = running_mean
        var = running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (xd - mean[None, :, None, None]) * ivar[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = out.astype(xd.dtype, copy=False)

    def backward(g: np.ndarray):
        if beta.requires_grad:
            beta.accumulate_grad(g.sum(axis=(0, 2, 3)), own=True)
        if gamma.requires_grad:
            gamma.accumulate_grad((g * xhat).sum(axis=(0, 2, 3)), own=True)
        if x.requires_grad:
            gxhat = g * gamma.data[None, :, None, None]
            if training:
                sum_g = gxhat.sum(axis=(0, 2, 3))
                sum_gx = (gxhat * xhat).sum(axis=(0, 2, 3))
                dx = (ivar[None, :, None, None] / n) * (
                    n * gxhat
                    - sum_g[None, :, None, None]
                    - xhat * sum_gx[None, :, None, None])
            else:
                dx = gxhat * ivar[None, :, None, None]
            x.accumulate_grad(dx.astype(xd.dtype, copy=False), own=True)

    return make_node(out, (x, gamma, beta), backward)


def relu(x: Tensor, inplace: bool = False) -> Tensor:
    if inplace and not grad_enabled():
        np.maximum(x.data, 0, out=x.data)
        return make_node(x.data, (), None)
    mask = x.data > 0
    out = np.where(mask, x.data, 0)

    def backward(g: np.ndarray):
        if x.requires_grad:
            x.accumulate_grad(np.where(mask, g, 0), own=True)

    return make_node(out, (x,), backward)


def upsample_nearest2x(x: Tensor) -> Tensor:
    """Repeat each pixel into a 2x2 block; backward sums the blocks."""
    xd = x.data
    out = np.repeat(np.repeat(xd, 2, axis=2), 2, axis=3)

    def backward(g: np.ndarray):
        if x.requires_grad:
            b, c, h2, w2 = g.shape
            x.accumulate_grad(
                g.reshape(b, c, h2 // 2, 2, w2 // 2, 2).sum(axis=(3, 5)), own=True)

    return make_node(out, (x,), backward)


def _fold_reflect_axis(g: np.ndarray, p: int, axis: int) -> np.ndarray:
    """Fold reflect-pad gradients back onto the unpadded extent along one axis."""
    length = g.shape[axis] - 2 * p

    def sl(a, b):
        s = [slice(None)] * g.ndim
        s[axis] = slice(a, b)
        return tuple(s)

    core = g[sl(p, p + length)].copy()
    if p:
        core[sl(1, p + 1)] += np.flip(g[sl(0, p)], axis=axis)
        core[sl(length - 1 - p, length - 1)] += np.flip(g[sl(p + length, 2 * p + length)],
                                                        axis=axis)
    return core


def reflect_pad(x: Tensor, p: int) -> Tensor:
    """Mirror padding without edge duplication on both spatial axes."""
    xd = x.data
    if p < 0:
        raise ValueError("padding must be non-negative")
    if p >= xd.shape[2] or p >= xd.shape[3]:
        raise ValueError(f"reflect padding {p} too large for spatial dims {xd.shape[2:]}")
    out = np.pad(xd, ((0, 0), (0, 0), (p, p), (p, p)), mode="reflect")

    def backward(g: np.ndarray):
        if x.requires_grad:
            x.accumulate_grad(_fold_reflect_axis(_fold_reflect_axis(g, p, 2), p, 3), own=True)

    return make_node(out, (x,), backward)


def concat_channels(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[0] != b.data.shape[0] or a.data.shape[2:] != b.data.shape[2:]:
        raise ValueError(
            f"concat needs matching batch/spatial dims, got {a.data.shape} and {b.data.shape}")
    ca = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)

    def backward(g: np.ndarray):
        if a.requires_grad:
            a.accumulate_grad(g[:, :ca], own=True)
        if b.requires_grad:
            b.accumulate_grad(g[:, ca:], own=True)

    return make_node(out, (a, b), backward)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ValueError(f"add needs identical shapes, got {a.data.shape} and {b.data.shape}")
    out = a.data + b.data

    def backward(g: np.ndarray):
        if a.requires_grad:
            a.accumulate_grad(g, own=True)
        if b.requires_grad:
            b.accumulate_grad(g)

    return make_node(out, (a, b), backward)


def mse_loss(pred: Tensor, truth) -> Tensor:
    """Mean over samples of the per-sample squared 2-norm of the error."""
    t = truth.data if isinstance(truth, Tensor) else np.asarray(truth)
    if pred.data.shape != t.shape:
        raise ValueError(f"loss shape mismatch: {pred.data.shape} vs {t.shape}")
    n = pred.data.shape[0]
    diff = pred.data - t
    out = np.asarray(np.sum(diff * diff) / n, dtype=pred.data.dtype)

    def backward(g: np.ndarray):
        if pred.requires_grad:
            pred.accumulate_grad((2.0 / n) * diff * g, own=True)

    return make_node(out, (pred,), backward)
