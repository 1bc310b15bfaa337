"""Central finite-difference gradient verification.

The comparison metric is ``|a - b| / max(1, |a|, |b|)`` taken elementwise
(absolute near zero, relative for large entries), reported as the max over
all checked parameters.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor


def rel_error(a, b):
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0


def gradcheck(fn, wrt, h=1e-5):
    """Compare tape gradients of ``fn()`` against central differences.

    ``fn`` must build a scalar loss from the tensors in ``wrt`` (any
    iterable of Tensors, all float64). Returns the worst rel_error.
    """
    wrt = list(wrt)
    for t in wrt:
        t.requires_grad = True
    ad.zero_grad(wrt)
    with Tape():
        loss = fn()
        ad.backward(loss)
    analytic = [t.grad.copy() for t in wrt]

    worst = 0.0
    for t, ga in zip(wrt, analytic):
        flat = t.data.reshape(-1)
        numeric = np.zeros_like(flat)
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = fn().item()
            flat[i] = keep - h
            down = fn().item()
            flat[i] = keep
            numeric[i] = (up - down) / (2.0 * h)
        worst = max(worst, rel_error(ga.reshape(-1), numeric))
    return worst
