"""Forward/backward pairs for the U-net's layer types.

Activations are NHWC: (batch, frequency, time, channels). Each ``*_forward``
returns ``(out, cache)``; the matching ``*_backward`` consumes
``(dout, cache)``. Every reduction runs in a fixed order, so results do not
depend on thread count.

Stride-1 convolutions use the flattened-padding trick: once the input is
zero-padded and flattened to (positions, channels), the tap at kernel offset
(i, j) is the contiguous row window starting at ``i * (W + 2p) + j``. A 3x3
convolution is then nine tall GEMMs on views, with no im2col buffer. Rows that
straddle an image edge produce junk outputs, which are cropped away.
"""

import numpy as np


def _pad_flat(x, ph, pw):
    n, h, w, c = x.shape
    xp = np.zeros((n, h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
    xp[:, ph:ph + h, pw:pw + w] = x
    return xp.reshape(-1, c)


def _shift_conv(flat, w, n, hp, wp, ho, wo):
    """Valid correlation of a padded, flattened batch with w: (kh, kw, Cin, Cout)."""
    kh, kw, _, cout = w.shape
    span = (kh - 1) * wp + (kw - 1)
    rows = flat.shape[0] - span
    out = np.zeros((flat.shape[0], cout), dtype=flat.dtype)
    tmp = np.empty((rows, cout), dtype=flat.dtype)
    for i in range(kh):
        for j in range(kw):
            off = i * wp + j
            np.matmul(flat[off:off + rows], w[i, j], out=tmp)
            out[:rows] += tmp
    return out.reshape(n, hp, wp, cout)[:, :ho, :wo]


def _im2col(xp, kh, kw, stride, ho, wo):
    n, _, _, c = xp.shape
    cols = np.empty((n, ho, wo, kh, kw, c), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, :, i, j, :] = xp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :]
    return cols.reshape(n * ho * wo, kh * kw * c)


def conv_forward(x, w, b=None, stride=1):
    """Same-padded 2-D convolution (cross-correlation).

    x: (N, H, W, Cin); w: (kh, kw, Cin, Cout); b: (Cout,) or None.
    Output spatial size is ceil(H / stride) x ceil(W / stride).
    """
    kh, kw, cin, cout = w.shape
    n, h, wd, c = x.shape
    if c != cin:
        raise ValueError(f"conv expects {cin} input channels, got {c}")
    ph, pw = kh // 2, kw // 2
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (wd + 2 * pw - kw) // stride + 1
    if kh == 1 and kw == 1:
        xs = x[:, ::stride, ::stride, :] if stride > 1 else x
        out = (xs.reshape(-1, cin) @ w.reshape(cin, cout)).reshape(n, ho, wo, cout)
    elif stride == 1:
        out = _shift_conv(_pad_flat(x, ph, pw), w, n, h + 2 * ph, wd + 2 * pw, ho, wo)
    else:
        xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
        out = (_im2col(xp, kh, kw, stride, ho, wo) @ w.reshape(-1, cout)).reshape(n, ho, wo, cout)
    if b is not None:
        out = out + b
    else:
        out = np.ascontiguousarray(out)
    return out, (x, w, b is not None, stride)


def conv_backward(dout, cache):
    """Returns (dx, dw, db); db is None for bias-free convolutions."""
    x, w, has_bias, stride = cache
    kh, kw, cin, cout = w.shape
    n, h, wd, _ = x.shape
    _, ho, wo, _ = dout.shape
    db = dout.reshape(-1, cout).sum(axis=0) if has_bias else None

    if kh == 1 and kw == 1:
        xs = x[:, ::stride, ::stride, :] if stride > 1 else x
        d2 = dout.reshape(-1, cout)
        dw = (xs.reshape(-1, cin).T @ d2).reshape(w.shape)
        dsub = (d2 @ w.reshape(cin, cout).T).reshape(n, ho, wo, cin)
        if stride == 1:
            return dsub, dw, db
        dx = np.zeros(x.shape, dtype=dout.dtype)
        dx[:, ::stride, ::stride, :] = dsub
        return dx, dw, db

    ph, pw = kh // 2, kw // 2
    if stride == 1:
        hp, wp = h + 2 * ph, wd + 2 * pw
        flat = _pad_flat(x, ph, pw)
        span = (kh - 1) * wp + (kw - 1)
        rows = flat.shape[0] - span
        # gradient laid out on the padded grid; junk positions carry zero
        dgrid = np.zeros((n, hp, wp, cout), dtype=dout.dtype)
        dgrid[:, :ho, :wo] = dout
        dflat = dgrid.reshape(-1, cout)[:rows]
        dw = np.empty_like(w)
        for i in range(kh):
            for j in range(kw):
                off = i * wp + j
                dw[i, j] = flat[off:off + rows].T @ dflat
        # dx is the full correlation of dout with the flipped, transposed kernel
        wflip = w[::-1, ::-1].transpose(0, 1, 3, 2)
        dx = _shift_conv(_pad_flat(dout, ph, pw), wflip, n, hp, wp, h, wd)
        return np.ascontiguousarray(dx), dw, db

    xp = np.pad(x, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    cols = _im2col(xp, kh, kw, stride, ho, wo)
    d2 = dout.reshape(-1, cout)
    dw = (cols.T @ d2).reshape(w.shape)
    del cols
    dcols = (d2 @ w.reshape(-1, cout).T).reshape(n, ho, wo, kh, kw, cin)
    dxp = np.zeros(xp.shape, dtype=dout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride, :] += dcols[:, :, :, i, j, :]
    return dxp[:, ph:ph + h, pw:pw + wd, :], dw, db


def batchnorm_forward(x, gamma, beta, running_mean, running_var, train, eps=1e-5, momentum=0.1):
    """Per-channel batch normalization over (batch, frequency, time).

    In train mode the batch statistics normalize ``x`` and the running
    estimates are updated in place (unbiased variance, as in PyTorch).
    """
    c = x.shape[-1]
    flat = x.reshape(-1, c)
    if train:
        count = flat.shape[0]
        mu = flat.mean(axis=0)
        xc = flat - mu
        var = np.einsum("ij,ij->j", xc, xc) / count
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv_std
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var * count / max(count - 1, 1)
        cache = (xhat, gamma, inv_std, x.shape)
    else:
        xhat = (flat - running_mean) / np.sqrt(running_var + eps)
        cache = None
    return (xhat * gamma + beta).reshape(x.shape), cache


def batchnorm_backward(dout, cache):
    xhat, gamma, inv_std, shape = cache
    d = dout.reshape(-1, shape[-1])
    count = d.shape[0]
    dbeta = d.sum(axis=0)
    dgamma = np.einsum("ij,ij->j", d, xhat)
    # dxhat = d * gamma, minus its mean and its projection on xhat (batch-statistics path)
    dx = (d - dbeta / count - xhat * (dgamma / count)) * (gamma * inv_std)
    return dx.reshape(shape), dgamma, dbeta


def leaky_relu_forward(x, slope=0.2):
    pos = x > 0
    return np.where(pos, x, slope * x), (pos, slope)


def leaky_relu_backward(dout, cache):
    pos, slope = cache
    return np.where(pos, dout, slope * dout)


def upsample_forward(x):
    """Nearest-neighbour 2x upsampling along frequency and time."""
    return x.repeat(2, axis=1).repeat(2, axis=2)


def upsample_backward(dout):
    n, h, w, c = dout.shape
    return dout.reshape(n, h // 2, 2, w // 2, 2, c).sum(axis=(2, 4))
