"""Central-difference gradient checking against the engine's analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class NondeterministicError(RuntimeError):
    pass


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: tuple | None
    n_checked: int

    def passed(self, tol: float) -> bool:
        return self.max_rel_error < tol


def finite_diff_check(
    f: Callable[[], Tensor],
    params: Tensor | Sequence[Tensor],
    h: float = 1e-5,
    tol: float | None = None,
    max_per_tensor: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare analytic gradients of the scalar ``f()`` with (f(p+h) - f(p-h)) / 2h.

    ``f`` is re-evaluated from scratch for every perturbation and must read the
    current contents of ``params``. With ``max_per_tensor`` only a seeded random
    subset of each tensor's elements is probed. Relative error uses the
    denominator max(|analytic|, |numeric|, 1e-8).

    If ``tol`` is given and exceeded, an ``AssertionError`` is raised.
    """
    if h <= 0:
        raise ValueError(f"step h must be positive, got {h}")
    if isinstance(params, Tensor):
        params = [params]

    for p in params:
        p.grad = None
    base = f()
    again = f()
    if base.data.size != 1:
        raise ValueError(f"f must return a scalar, got shape {base.shape}")
    if float(base.data) != float(again.data):
        raise NondeterministicError(
            f"f returned {float(base.data)!r} then {float(again.data)!r} on identical inputs"
        )
    base.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = None

    rng = np.random.default_rng(seed)
    worst, worst_at, count = 0.0, None, 0
    for k, (p, a) in enumerate(zip(params, analytic)):
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = np.sort(rng.choice(flat.size, size=max_per_tensor, replace=False))
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2.0 * h)
            ana = a.reshape(-1)[i]
            rel = abs(ana - num) / max(abs(ana), abs(num), 1e-8)
            count += 1
            if rel > worst:
                worst, worst_at = rel, (k, int(i))
    report = GradCheckReport(worst, worst_at, count)
    if tol is not None and not report.passed(tol):
        raise AssertionError(
            f"gradient check failed: max relative error {worst:.3e} >= {tol:g} at {worst_at}"
        )
    return report
