"""Central finite-difference verification of analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import UsageError
from .tensor import Parameter, Tensor, backward, no_grad


@dataclass
class GradCheckReport:
    errors: dict = field(default_factory=dict)  # parameter name -> max relative error
    tol: float = 1e-4

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.errors.values())

    @property
    def worst(self) -> tuple:
        if not self.errors:
            return ("", 0.0)
        name = max(self.errors, key=self.errors.get)
        return name, self.errors[name]

    def __str__(self) -> str:
        lines = [f"{name}\t{err:.3e}\t{'ok' if err <= self.tol else 'FAIL'}" for name, err in self.errors.items()]
        return "\n".join(lines)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """|a - n| / max(|a|, |n|, floor); the floor keeps near-zero gradients from dividing by noise."""
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def grad_check(
    build: Callable[[], Tensor],
    params: Sequence[Parameter],
    step: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
    max_entries: int | None = None,
    seed: int = 0,
) -> GradCheckReport:
    """Compare backward() against central differences for every entry of every parameter.

    ``build`` must be deterministic; it is evaluated twice up front and a
    mismatch raises UsageError. ``max_entries`` optionally subsamples large
    parameters (entries chosen with ``seed``).
    """
    params = list(params)
    with no_grad():
        first = build().item()
        second = build().item()
    if first != second:
        raise UsageError(f"closure is not deterministic: {first!r} != {second!r}")

    saved = [None if p.grad is None else p.grad.copy() for p in params]
    for p in params:
        p.grad = np.zeros_like(p.data)
    root = build()
    backward(root)
    analytic = [p.grad.copy() for p in params]
    for p, g in zip(params, saved):
        p.grad = g

    rng = np.random.default_rng(seed)
    report = GradCheckReport(tol=tol)
    with no_grad():
        for i, p in enumerate(params):
            name = getattr(p, "name", f"param{i}")
            flat = p.data.reshape(-1)
            idx = np.arange(flat.size)
            if max_entries is not None and flat.size > max_entries:
                idx = rng.choice(flat.size, size=max_entries, replace=False)
            numeric = np.empty(idx.size)
            for j, k in enumerate(idx):
                orig = flat[k]
                flat[k] = orig + step
                up = build().item()
                flat[k] = orig - step
                down = build().item()
                flat[k] = orig
                numeric[j] = (up - down) / (2.0 * step)
            a = analytic[i].reshape(-1)[idx]
            finite = np.isfinite(flat[idx])
            err = relative_error(a[finite], numeric[finite], floor) if finite.any() else np.zeros(1)
            report.errors[name] = float(err.max()) if err.size else 0.0
    return report
