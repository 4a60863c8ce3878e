"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .nn import Parameter
from .tensor import NonFiniteError, Tensor


@dataclass
class CoordinateResult:
    param: str
    index: tuple
    analytic: float
    numeric: float
    rel_err: float


@dataclass
class GradCheckReport:
    max_rel_err: float
    tol: float
    checked: int
    skipped: list[tuple[str, tuple]] = field(default_factory=list)
    worst: CoordinateResult | None = None

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.max_rel_err < self.tol


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    """|a - n| / max(|a|, |n|, floor).

    The floor keeps coordinates whose true gradient is ~0 from reporting
    round-off noise as a large relative error.
    """
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def finite_diff_check(f: Callable[[], Tensor], params: Sequence[Parameter], step: float = 1e-5,
                      tol: float = 1e-3, max_coords: int = 200, seed: int = 0,
                      floor: float = 1e-6) -> GradCheckReport:
    """Compare reverse-mode gradients of the scalar ``f()`` against central differences.

    ``f`` is re-evaluated with each sampled coordinate perturbed in place by
    ``+step`` and ``-step``. At most ``max_coords`` coordinates are sampled
    per parameter tensor. Frozen parameters are skipped.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    params = [p for p in params if not p.frozen]
    for p in params:
        p.grad = None
    loss = f()
    if loss.data.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued function")
    loss.backward()
    analytic = {id(p): (np.zeros_like(p.data) if p.grad is None else p.grad.copy()) for p in params}
    rng = np.random.default_rng(seed)
    report = GradCheckReport(max_rel_err=0.0, tol=tol, checked=0)
    for p in params:
        n = p.data.size
        flat_ids = rng.choice(n, size=min(n, max_coords), replace=False) if n > max_coords else np.arange(n)
        for flat in flat_ids:
            idx = np.unravel_index(int(flat), p.data.shape)
            orig = p.data[idx]
            try:
                p.data[idx] = orig + step
                up = float(f().data)
                p.data[idx] = orig - step
                down = float(f().data)
            except NonFiniteError:
                report.skipped.append((p.name, idx))
                continue
            finally:
                p.data[idx] = orig
            if not (math.isfinite(up) and math.isfinite(down)):
                report.skipped.append((p.name, idx))
                continue
            numeric = (up - down) / (2.0 * step)
            a = float(analytic[id(p)][idx])
            err = relative_error(a, numeric, floor)
            report.checked += 1
            if report.worst is None or err > report.max_rel_err:
                report.max_rel_err = max(report.max_rel_err, err)
                report.worst = CoordinateResult(p.name, tuple(int(i) for i in idx), a, numeric, err)
    for p in params:
        p.grad = None
    return report
