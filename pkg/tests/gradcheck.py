"""Finite-difference gradient checking used across the nn test suite.

The probe runs in float64: central differences with per-element step
1e-5 * (1 + |x|), compared against the analytic gradient from one
backward pass. The numeric side never touches the autodiff machinery,
so it stays an independent oracle for it.
"""

import numpy as np

from speechrl.nn import Tensor


def numeric_grad(forward, param: Tensor) -> np.ndarray:
    """Central-difference gradient of ``forward()`` w.r.t. ``param``.

    ``forward`` must recompute the scalar loss from current tensor
    contents on every call (including re-seeding any rng it uses).
    """
    flat = param.data.reshape(-1)
    grad = np.zeros(flat.shape, dtype=np.float64)
    for i in range(flat.size):
        orig = flat[i]
        h = 1e-5 * (1.0 + abs(orig))
        flat[i] = orig + h
        f_plus = forward()
        flat[i] = orig - h
        f_minus = forward()
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(param.shape)


def max_rel_err(analytic: np.ndarray, numeric: np.ndarray) -> float:
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(1e-6, np.maximum(np.abs(analytic), np.abs(numeric)))
    return float(np.max(np.abs(analytic - numeric) / denom))


def check_grads(build_loss, params, tol=1e-4) -> float:
    """Assert analytic vs numeric agreement for every tensor in ``params``.

    ``build_loss`` constructs the graph and returns the scalar loss
    Tensor. Returns the worst relative error seen.
    """
    loss = build_loss()
    loss.backward()
    analytic = [None if p.grad is None else p.grad.copy() for p in params]

    def forward_value():
        return float(build_loss().data)

    worst = 0.0
    for p, a in zip(params, analytic):
        n = numeric_grad(forward_value, p)
        err = max_rel_err(np.zeros_like(n) if a is None else a, n)
        worst = max(worst, err)
        assert err <= tol, f"gradient mismatch for shape {p.shape}: rel err {err:.3e} > {tol}"
    return worst


def rand_tensor(rng: np.random.Generator, shape, scale=1.0, requires_grad=True) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=requires_grad)
