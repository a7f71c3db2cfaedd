"""Central finite-difference checks against reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    n_checked: int
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error <= self.tol


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """Norm-wise relative error ``|a - n| / max(|a|, |n|, floor)``."""
    analytic = np.ravel(analytic)
    numeric = np.ravel(numeric)
    denom = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / denom)


def numerical_gradient(
    fn: Callable[[], Tensor],
    param: Tensor,
    indices: Sequence[int] | None = None,
    step: float = 1e-5,
) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. selected flat entries of ``param``."""
    flat = param.data.reshape(-1)
    if indices is None:
        indices = range(flat.size)
    out = np.empty(len(indices))
    for j, i in enumerate(indices):
        orig = flat[i]
        flat[i] = orig + step
        plus = fn().item()
        flat[i] = orig - step
        minus = fn().item()
        flat[i] = orig
        out[j] = (plus - minus) / (2.0 * step)
    return out


def check_gradients(
    fn: Callable[[], Tensor],
    params: Sequence[tuple[str, Tensor]],
    *,
    tol: float = 1e-4,
    step: float = 1e-5,
    max_entries: int | None = None,
    rng: np.random.Generator | None = None,
) -> list[GradCheckResult]:
    """Compare backprop against finite differences for each named parameter.

    With ``max_entries`` set, only that many randomly chosen entries per
    parameter are perturbed.
    """
    for _, p in params:
        p.grad = None
    fn().backward()
    analytic = {name: (p.grad if p.grad is not None else np.zeros_like(p.data)) for name, p in params}
    rng = rng or np.random.default_rng(0)
    results = []
    for name, p in params:
        n = p.size
        if max_entries is not None and n > max_entries:
            idx = np.sort(rng.choice(n, size=max_entries, replace=False))
        else:
            idx = np.arange(n)
        numeric = numerical_gradient(fn, p, idx, step)
        err = relative_error(analytic[name].reshape(-1)[idx], numeric)
        results.append(GradCheckResult(name, err, len(idx), tol))
    for _, p in params:
        p.grad = None
    return results
