"""Shared oracles: central finite differences, kept independent of the tape."""

from __future__ import annotations

import numpy as np

from dcvlm.autograd import Tape, Tensor


def numeric_grad(f, t: Tensor, h: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of scalar f() w.r.t. t, perturbing t.data.

    f must re-read t.data on every call; it is evaluated forward-only so
    the result never depends on the tape machinery under test.
    """
    base = t.data.copy()
    g = np.zeros_like(base, dtype=np.float64)
    flat = t.data.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = float(f())
        flat[i] = orig - h
        down = float(f())
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    t.data = base
    return g


def max_rel_err(a: np.ndarray, b: np.ndarray, floor: float = 1e-6) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    scale = np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / scale))


def tape_grads(loss_fn, params: list[Tensor]) -> list[np.ndarray]:
    """Run loss_fn under a fresh tape and return grads aligned with params."""
    for p in params:
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    return [None if p.grad is None else p.grad.copy() for p in params]


def check_grads(loss_fn, params: list[Tensor], tol: float = 1e-4,
                h: float = 1e-5) -> float:
    """Compare tape gradients of loss_fn against finite differences.

    Returns the worst relative error over all parameters; asserts < tol.
    """
    grads = tape_grads(loss_fn, params)
    worst = 0.0
    for p, g in zip(params, grads):
        fd = numeric_grad(lambda: loss_fn().item(), p, h)
        assert g is not None, "no gradient reached a requires_grad parameter"
        err = max_rel_err(g, fd)
        worst = max(worst, err)
    assert worst < tol, f"gradient mismatch: max rel err {worst:.3e} >= {tol}"
    return worst
