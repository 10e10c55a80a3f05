"""Shared test utilities: finite-difference gradient checking per op kind."""

from __future__ import annotations

import numpy as np

from menan import autodiff as ad
from menan.autodiff import Tensor


def _spread(rng, shape, min_gap=0.05):
    """Random values kept away from zero (PReLU kink hygiene)."""
    x = rng.standard_normal(shape)
    x = np.where(np.abs(x) < min_gap, x + np.sign(x + 1e-12) * 2 * min_gap, x)
    return x


def _max_safe(rng, shape):
    """Random (B, T, C) whose per-(b, c) time maxima are unambiguous."""
    while True:
        x = rng.standard_normal(shape)
        top2 = np.sort(x, axis=1)[:, -2:, :]
        if np.all(top2[:, 1, :] - top2[:, 0, :] > 1e-3):
            return x


def op_cases(rng):
    """One (inputs, apply) instance per op kind, freshly sampled."""
    r = rng

    def t(x):
        return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)

    cases = {
        "add": ([t(r.standard_normal((3, 4))), t(r.standard_normal((3, 4)))],
                lambda a, b: ad.add(a, b)),
        "sub": ([t(r.standard_normal((3, 4))), t(r.standard_normal(4))],
                lambda a, b: ad.sub(a, b)),
        "mul": ([t(r.standard_normal((3, 4))), t(r.standard_normal((3, 4)))],
                lambda a, b: ad.mul(a, b)),
        "neg": ([t(r.standard_normal((2, 5)))], ad.neg),
        "matmul": ([t(r.standard_normal((2, 3, 4))), t(r.standard_normal((4, 5)))],
                   lambda a, b: ad.matmul(a, b)),
        "linear": ([t(r.standard_normal((3, 4))), t(r.standard_normal((4, 5))),
                    t(r.standard_normal(5))], ad.linear),
        "conv1d": ([t(r.standard_normal((2, 11, 3))), t(r.standard_normal((4, 3, 2))),
                    t(r.standard_normal(2))],
                   lambda x, w, b: ad.conv1d(x, w, b, stride=2)),
        "gru": ([t(0.5 * r.standard_normal((2, 4, 3))), t(0.5 * r.standard_normal((3, 12))),
                 t(0.5 * r.standard_normal((4, 12))), t(0.1 * r.standard_normal(12)),
                 t(0.1 * r.standard_normal(12))], ad.gru),
        "prelu": ([t(_spread(r, (3, 5))), t(np.array(0.25))], ad.prelu),
        "sigmoid": ([t(r.standard_normal((3, 4)))], ad.sigmoid),
        "tanh": ([t(r.standard_normal((3, 4)))], ad.tanh),
        "exp": ([t(0.5 * r.standard_normal((3, 4)))], ad.exp),
        "log": ([t(0.5 + np.abs(r.standard_normal((3, 4))))], ad.log),
        "softmax": ([t(r.standard_normal((3, 6)))], ad.softmax),
        "log_softmax": ([t(r.standard_normal((3, 6)))], ad.log_softmax),
        "sum": ([t(r.standard_normal((3, 4)))], lambda x: ad.tsum(x, axis=1)),
        "mean": ([t(r.standard_normal((3, 4)))], lambda x: ad.tmean(x)),
        "std_time": ([t(r.standard_normal((2, 6, 3)))], ad.std_time),
        "max_time": ([t(_max_safe(r, (2, 7, 3)))], ad.max_time),
        "concat": ([t(r.standard_normal((2, 3))), t(r.standard_normal((2, 4)))],
                   lambda a, b: ad.concat([a, b], axis=-1)),
        "grad_reverse": ([t(r.standard_normal((3, 4)))],
                         lambda x: ad.grad_reverse(x, 0.7)),
    }
    return cases


# grad_reverse intentionally back-propagates -coeff times the identity
# derivative, so its finite-difference check folds that factor in.
GRAD_SCALE = {"grad_reverse": -0.7}


def max_grad_error(kind: str, inputs, apply_fn, rng, h=1e-5):
    """Max relative error between analytic and central-difference grads."""
    proj = rng.standard_normal(apply_fn(*inputs).data.shape)

    def scalar():
        out = apply_fn(*inputs)
        return float(np.sum(out.data * proj))

    out = apply_fn(*inputs)
    loss = ad.tsum(ad.mul(out, Tensor(proj)))
    loss.backward()
    scale = GRAD_SCALE.get(kind, 1.0)
    worst = 0.0
    for t in inputs:
        analytic = np.zeros_like(t.data) if t.grad is None else t.grad
        flat = t.data.reshape(-1)
        num = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = scalar()
            flat[i] = orig - h
            fm = scalar()
            flat[i] = orig
            num[i] = (fp - fm) / (2 * h)
        num = scale * num.reshape(t.data.shape)
        err = np.abs(analytic - num) / np.maximum(1.0, np.maximum(np.abs(analytic), np.abs(num)))
        worst = max(worst, float(err.max()))
    return worst
