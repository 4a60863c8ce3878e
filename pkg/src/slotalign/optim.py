"""Adam with per-group peak learning rates and a warmup/linear-decay schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


def warmup_linear(step: int, total_steps: int, warmup_proportion: float) -> float:
    """Multiplier on the peak learning rate at ``step`` (0-based).

    Rises linearly from 0 at step 0 to 1 at ``ceil(warmup_proportion * total)``,
    then decays linearly to 0 at ``total_steps``.
    """
    if total_steps <= 0:
        raise ValueError("total_steps must be positive")
    warmup = math.ceil(warmup_proportion * total_steps)
    if step < warmup:
        return step / warmup
    if total_steps == warmup:
        return 1.0
    return max(0.0, (total_steps - step) / (total_steps - warmup))


@dataclass
class ParamGroup:
    name: str
    params: list[Parameter]
    peak_lr: float


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    def __init__(self, groups: list[ParamGroup], total_steps: int, warmup_proportion: float = 0.1,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        names = [p.name for g in groups for p in g.params]
        if len(set(names)) != len(names):
            raise ValueError("parameter names must be unique across groups")
        if not 0.0 <= warmup_proportion < 1.0:
            raise ValueError("warmup_proportion must lie in [0, 1)")
        self.groups = groups
        self.total_steps = total_steps
        self.warmup_proportion = warmup_proportion
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.state: AdamState | None = None

    def init_state(self) -> None:
        self.state = AdamState()
        for g in self.groups:
            for p in g.params:
                self.state.m[p.name] = np.zeros_like(p.data)
                self.state.v[p.name] = np.zeros_like(p.data)

    def lr(self, group: ParamGroup, step: int | None = None) -> float:
        step = self.state.step if step is None else step
        return group.peak_lr * warmup_linear(step, self.total_steps, self.warmup_proportion)

    def step(self) -> None:
        if self.state is None:
            raise RuntimeError("optimizer state is not initialized; call init_state() first")
        st = self.state
        t = st.step + 1
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for g in self.groups:
            lr = self.lr(g)
            for p in g.params:
                if p.frozen or p.grad is None:
                    continue
                m = st.m[p.name]
                v = st.v[p.name]
                m *= self.beta1
                m += (1.0 - self.beta1) * p.grad
                v *= self.beta2
                v += (1.0 - self.beta2) * (p.grad * p.grad)
                if lr != 0.0:
                    p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
        st.step = t

    def zero_grad(self) -> None:
        for g in self.groups:
            for p in g.params:
                p.grad = None

