"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor, fresh_tape, no_grad


def grad_check(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-5) -> float:
    """Max relative error between backprop and central differences.

    ``fn`` rebuilds the scalar graph from the current values of ``inputs``
    (it is called once with the tape on, then twice per coordinate under
    ``no_grad``).  Relative error per coordinate is
    ``|a - n| / max(1e-8, |a| + |n|)``.
    """
    for x in inputs:
        x.data = np.ascontiguousarray(x.data)
        x.requires_grad = True
        x.grad = None
    with fresh_tape() as tape:
        loss = fn()
        tape.backward(loss)
    analytic = [np.zeros_like(x.data) if x.grad is None else x.grad.copy() for x in inputs]

    worst = 0.0
    with no_grad():
        for x, a in zip(inputs, analytic):
            flat = x.data.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                up = fn().item()
                flat[i] = orig - h
                down = fn().item()
                flat[i] = orig
                num = (up - down) / (2.0 * h)
                ana = a.reshape(-1)[i]
                err = abs(ana - num) / max(1e-8, abs(ana) + abs(num))
                worst = max(worst, err)
    return worst
