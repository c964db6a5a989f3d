"""Oracles shared by the unit tests and the acceptance suite."""

import math

import numpy as np

from rollnet.model.loss import multitask_loss
from rollnet.model.unet import ModelConfig, backward, init_params, unet_forward


def rel_err(a, b, floor=1e-8):
    return abs(a - b) / max(abs(a), abs(b), floor)


def reduced_network(seed=0, n_instruments=3):
    """Two levels of width 4 on an 8x16 input, f64, with every tensor randomized."""
    cfg = ModelConfig(n_instruments=n_instruments, widths=(4, 4), n_freq=8, n_frames=16, dtype="float64")
    params = init_params(cfg, seed)
    r = np.random.default_rng(seed + 1)
    for name in params.learnable():
        t = params.tensors[name]
        if "gamma" in name:
            t[:] = r.normal(1.0, 0.3, t.shape)
        elif name.endswith(".w"):
            t[:] = r.normal(0.0, 1.0 / math.sqrt(np.prod(t.shape[:3])), t.shape)
        else:
            t[:] = r.normal(0.0, 0.3, t.shape)
    return params


def network_gradcheck(n_samples=200, seed=0, eps=1e-6):
    """Analytic vs central-difference gradients on sampled parameters; returns (errors, names)."""
    params = reduced_network(seed)
    cfg = params.config
    r = np.random.default_rng(seed + 2)
    x = r.normal(size=(2, cfg.n_freq, cfg.n_frames))
    y = (r.random((2, cfg.n_freq, cfg.n_frames, cfg.n_instruments)) < 0.3).astype(np.uint8)
    mask = np.ones((2, cfg.n_frames))
    mask[1, 12:] = 0

    def total():
        z, _ = unet_forward(x, params, train=True)
        return multitask_loss(z, y, mask)[0].total

    z, cache = unet_forward(x, params, train=True)
    _, dz = multitask_loss(z, y, mask)
    grads = backward(cache, dz, params)

    names = params.learnable()
    sizes = np.array([params[n].size for n in names])
    # every tensor at least once, the rest proportional to size
    picks = list(range(len(names)))
    picks += r.choice(len(names), size=max(0, n_samples - len(names)), p=sizes / sizes.sum()).tolist()
    errors, where = [], []
    for k in picks:
        name = names[k]
        t = params.tensors[name]
        idx = tuple(int(r.integers(0, s)) for s in t.shape)
        old = t[idx]
        t[idx] = old + eps
        up = total()
        t[idx] = old - eps
        down = total()
        t[idx] = old
        errors.append(rel_err((up - down) / (2 * eps), grads[name][idx]))
        where.append(name)
    return np.array(errors), where


def loop_loss(z, y, mask):
    """Scalar triple-loop evaluation of the three BCE sums and weights for (F, T, M) inputs."""
    f_n, t_n, m_n = z.shape

    def bce(logit, label):
        p = 1.0 / (1.0 + math.exp(-logit))
        return -(label * math.log(p) + (1 - label) * math.log(1 - p))

    l_roll = l_p = l_i = 0.0
    t_valid = 0
    for t in range(t_n):
        if not mask[t]:
            continue
        t_valid += 1
        for f in range(f_n):
            for m in range(m_n):
                l_roll += bce(z[f, t, m], y[f, t, m])
            l_p += bce(max(z[f, t, :]), max(y[f, t, :]))
        for m in range(m_n):
            l_i += bce(max(z[:, t, m]), max(y[:, t, m]))
    weights = (1 / (f_n * t_valid * m_n), 1 / (f_n * t_valid), 1 / (m_n * t_valid))
    return (l_roll, l_p, l_i), weights


def loss_gradcheck(seed=0, eps=1e-4):
    r = np.random.default_rng(seed)
    z = r.normal(size=(4, 8, 3)) * 2
    y = (r.random((4, 8, 3)) < 0.4).astype(np.uint8)
    mask = (np.arange(8) < 6).astype(float)
    _, g = multitask_loss(z, y, mask)
    worst = 0.0
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += eps
        zm[idx] -= eps
        num = (multitask_loss(zp, y, mask)[0].total - multitask_loss(zm, y, mask)[0].total) / (2 * eps)
        worst = max(worst, rel_err(num, g[idx], floor=1e-6))
    return worst
