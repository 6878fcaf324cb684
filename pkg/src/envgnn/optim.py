"""Adam optimizer with per-parameter moment state."""

from __future__ import annotations

import numpy as np

from .autodiff import ParameterStore
from .errors import ArgumentError, NumericError, StateError


class Adam:
    """Standard Adam with bias correction over a ParameterStore."""

    def __init__(
        self,
        store: ParameterStore,
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        if lr <= 0:
            raise ArgumentError("learning rate must be positive")
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ArgumentError("betas must lie in [0, 1)")
        self.store = store
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {name: np.zeros_like(p.data) for name, p in store.items()}
        self.v = {name: np.zeros_like(p.data) for name, p in store.items()}

    def zero_grad(self) -> None:
        self.store.zero_grad()

    def step(self) -> None:
        """One update over every registered parameter; grads must be set."""
        for name, p in self.store.items():
            if p.grad is None:
                raise StateError(f"parameter {name!r} has no gradient; run backward first")
            if not np.all(np.isfinite(p.grad)):
                raise NumericError(f"non-finite gradient for parameter {name!r}")
        self.t += 1
        b1t = 1.0 - self.beta1**self.t
        b2t = 1.0 - self.beta2**self.t
        for name, p in self.store.items():
            g = p.grad
            self.m[name] = self.beta1 * self.m[name] + (1.0 - self.beta1) * g
            self.v[name] = self.beta2 * self.v[name] + (1.0 - self.beta2) * (g * g)
            m_hat = self.m[name] / b1t
            v_hat = self.v[name] / b2t
            p.data = p.data - self.lr * m_hat / (np.sqrt(v_hat) + self.eps)

    def state(self) -> tuple[int, dict[str, np.ndarray], dict[str, np.ndarray]]:
        return self.t, self.m, self.v

    def load_state(self, t: int, m: dict[str, np.ndarray], v: dict[str, np.ndarray]) -> None:
        for name in self.store.names():
            if name not in m or name not in v:
                raise ArgumentError(f"optimizer state missing moments for {name!r}")
            self.m[name] = np.asarray(m[name], dtype=np.float64).reshape(self.m[name].shape).copy()
            self.v[name] = np.asarray(v[name], dtype=np.float64).reshape(self.v[name].shape).copy()
        self.t = int(t)
