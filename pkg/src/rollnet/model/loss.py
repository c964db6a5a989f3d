"""Three-term BCE objective on the pianoroll and its two max-marginals."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit


@dataclass(frozen=True)
class LossBreakdown:
    l_roll: float
    l_p: float
    l_i: float
    w_roll: float
    w_p: float
    w_i: float

    @property
    def total(self) -> float:
        return self.w_roll * self.l_roll + self.w_p * self.l_p + self.w_i * self.l_i

    def record(self, step: int) -> str:
        return f"{step}\t{self.l_roll:.9g}\t{self.l_p:.9g}\t{self.l_i:.9g}\t{self.total:.9g}"


def _bce_with_logits(z, y):
    # -[y log s(z) + (1-y) log(1-s(z))] == softplus(z) - y z, computed without overflow
    return np.logaddexp(0.0, z) - y * z


def _argmax_share(z, zmax, axis):
    hit = (z == np.expand_dims(zmax, axis)).astype(z.dtype)
    return hit / hit.sum(axis=axis, keepdims=True)


def multitask_loss(logits, labels, mask=None):
    """Loss terms and dTotal/dlogits.

    logits, labels: (N, F, T, M) or (F, T, M); mask: (N, T) or (T,), 1 for
    valid frames. The marginal predictions are max-marginals of sigmoid(logits);
    since sigmoid is monotone their logits are the max logits, and the marginal
    gradient flows to the arg-max cell (split evenly between ties).
    Sums are accumulated in float64.
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels)
    if z.shape != y.shape:
        raise ValueError(f"logits {z.shape} and labels {y.shape} differ in shape")
    if y.size and not np.all((y == 0) | (y == 1)):
        raise ValueError("labels must be binary")
    squeeze = z.ndim == 3
    if squeeze:
        z, y = z[None], y[None]
    n, f, t, m = z.shape
    if mask is None:
        mask = np.ones((n, t))
    mask = np.asarray(mask, dtype=np.float64).reshape(n, t)
    y = y.astype(np.float64)
    t_valid = mask.sum()
    if t_valid == 0:
        raise ValueError("no valid frames in batch")

    yp = y.max(axis=3)
    yi = y.max(axis=1)
    zp = z.max(axis=3)  # (N, F, T)
    zi = z.max(axis=1)  # (N, T, M)
    mr = mask[:, None, :, None]
    mp = mask[:, None, :]
    mi = mask[:, :, None]

    l_roll = float(np.sum(_bce_with_logits(z, y) * mr))
    l_p = float(np.sum(_bce_with_logits(zp, yp) * mp))
    l_i = float(np.sum(_bce_with_logits(zi, yi) * mi))
    w_roll = 1.0 / (f * t_valid * m)
    w_p = 1.0 / (f * t_valid)
    w_i = 1.0 / (m * t_valid)
    loss = LossBreakdown(l_roll, l_p, l_i, w_roll, w_p, w_i)

    grad = w_roll * (expit(z) - y) * mr
    grad += _argmax_share(z, zp, 3) * np.expand_dims(w_p * (expit(zp) - yp) * mp, 3)
    grad += _argmax_share(z, zi, 1) * np.expand_dims(w_i * (expit(zi) - yi) * mi, 1)
    if squeeze:
        grad = grad[0]
    return loss, grad
