"""Central finite-difference gradient checks."""

from dataclasses import dataclass

import numpy as np

from .tensor import Tensor, backward


@dataclass
class GradCheckReport:
    max_rel_error: float
    rel_errors: np.ndarray
    passed: bool


def rel_error(analytic, numeric, floor=1e-3):
    """|a - n| / max(|a|, |n|, floor); ``floor`` keeps near-zero gradients finite."""
    return np.abs(analytic - numeric) / np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)),
                                                   floor)


def numeric_grad(f, x, h=1e-5):
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f(Tensor(x.copy())).data)
        flat[i] = orig - h
        fm = float(f(Tensor(x.copy())).data)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def grad_check(f, x, h=1e-5, tol=1e-5, analytic=None, floor=1e-3):
    """Compare the reverse-mode gradient of scalar ``f`` at ``x`` with central differences.

    ``analytic`` overrides the autograd gradient (used to test hand-written
    derivatives).
    """
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)
    if analytic is None:
        xt = Tensor(x.copy(), requires_grad=True)
        backward(f(xt), [xt])
        analytic = xt.grad
    num = numeric_grad(f, x, h)
    err = rel_error(np.asarray(analytic, dtype=np.float64), num, floor)
    worst = float(err.max()) if err.size else 0.0
    return GradCheckReport(worst, err, worst <= tol)
