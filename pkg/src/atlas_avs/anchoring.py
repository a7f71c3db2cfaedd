"""Low-rank anchoring and the AdamW optimizer whose steps it tracks.

Importance follows the optimization path: every step adds ``-g * delta`` to a
running per-parameter integral ``omega``.  At a task boundary the integral is
normalized by the squared displacement over the task (plus damping ``xi``),
clamped at zero and added to ``Omega``.  The stability penalty then pulls
parameters towards the boundary snapshot with strength ``c * Omega``.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .tensor import ContractError, Tensor


class TrainingError(RuntimeError):
    pass


class AdamW:
    """Adam with decoupled weight decay applied to every parameter it owns."""

    def __init__(self, params: Sequence[tuple[str, Tensor]], lr: float = 1e-3,
                 weight_decay: float = 5e-4, betas: tuple[float, float] = (0.9, 0.999),
                 eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.weight_decay, self.eps = lr, weight_decay, eps
        self.beta1, self.beta2 = betas
        self.step_count = 0
        self.m = {n: np.zeros_like(p.data) for n, p in self.params}
        self.v = {n: np.zeros_like(p.data) for n, p in self.params}

    def zero_grad(self) -> None:
        for _, p in self.params:
            p.grad = None

    def grads(self) -> dict[str, np.ndarray]:
        return {n: (p.grad if p.grad is not None else np.zeros_like(p.data)) for n, p in self.params}

    def step(self, grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
        """Update parameters in place and return the realized deltas."""
        grads = self.grads() if grads is None else grads
        for name, g in grads.items():
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient for parameter {name}")
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        deltas = {}
        for name, p in self.params:
            g = grads[name]
            m = self.m[name]
            v = self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            before = p.data.copy()
            if self.weight_decay:
                p.data -= self.lr * self.weight_decay * p.data
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            deltas[name] = p.data - before
        return deltas


def adamw_step(opt: AdamW, grads: dict[str, np.ndarray] | None = None) -> dict[str, np.ndarray]:
    return opt.step(grads)


class AnchorState:
    """Anchors, importances and path integrals for a fixed set of parameters."""

    def __init__(self, params: Sequence[tuple[str, Tensor]], xi: float = 1e-3):
        if xi <= 0:
            raise ValueError("xi must be positive")
        self.xi = xi
        self.names = [n for n, _ in params]
        self.theta_star = {n: p.data.copy() for n, p in params}
        self.theta_start = {n: p.data.copy() for n, p in params}
        self.importance = {n: np.zeros_like(p.data) for n, p in params}
        self.omega = {n: np.zeros_like(p.data) for n, p in params}
        self.n_consolidations = 0

    @property
    def active(self) -> bool:
        return self.n_consolidations > 0

    def accumulate(self, grads: dict[str, np.ndarray], deltas: dict[str, np.ndarray]) -> None:
        for name in self.names:
            g, d = grads[name], deltas[name]
            if g.shape != self.omega[name].shape or d.shape != g.shape:
                raise ContractError(
                    f"{name}: grad {g.shape} / delta {d.shape} vs tracked {self.omega[name].shape}"
                )
            self.omega[name] -= g * d

    def consolidate(self, params: Sequence[tuple[str, Tensor]]) -> None:
        current = dict(params)
        for name in self.names:
            theta = current[name].data
            disp = theta - self.theta_start[name]
            self.importance[name] += np.maximum(self.omega[name], 0.0) / (disp * disp + self.xi)
            self.theta_star[name] = theta.copy()
            self.theta_start[name] = theta.copy()
            self.omega[name] = np.zeros_like(theta)
        self.n_consolidations += 1

    def stability_loss(self, params: Sequence[tuple[str, Tensor]], c: float) -> Tensor:
        """``(c/2) * sum(Omega * (theta - theta*)^2)``; exactly 0 before any consolidation."""
        if not self.active:
            return Tensor(0.0)
        current = dict(params)
        total = None
        for name in self.names:
            diff = current[name] - self.theta_star[name]
            term = (diff * diff * self.importance[name]).sum()
            total = term if total is None else total + term
        if total is None:
            return Tensor(0.0)
        return total * (0.5 * c)

    def analytic_gradient(self, params: Sequence[tuple[str, Tensor]], c: float) -> dict[str, np.ndarray]:
        current = dict(params)
        return {n: c * self.importance[n] * (current[n].data - self.theta_star[n]) for n in self.names}

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for n in self.names:
            out[f"anchor.theta_star.{n}"] = self.theta_star[n]
            out[f"anchor.theta_start.{n}"] = self.theta_start[n]
            out[f"anchor.importance.{n}"] = self.importance[n]
            out[f"anchor.omega.{n}"] = self.omega[n]
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray], n_consolidations: int) -> None:
        for n in self.names:
            self.theta_star[n] = arrays[f"anchor.theta_star.{n}"].copy()
            self.theta_start[n] = arrays[f"anchor.theta_start.{n}"].copy()
            self.importance[n] = arrays[f"anchor.importance.{n}"].copy()
            self.omega[n] = arrays[f"anchor.omega.{n}"].copy()
        self.n_consolidations = n_consolidations


def accumulate_importance(state: AnchorState, grads, deltas) -> None:
    state.accumulate(grads, deltas)


def consolidate_task(state: AnchorState, params) -> None:
    state.consolidate(params)


def stability_loss(state: AnchorState, params, c: float) -> Tensor:
    return state.stability_loss(params, c)
