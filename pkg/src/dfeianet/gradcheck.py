"""Central finite-difference gradient checking (64-bit)."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import ops
from .tensor import CHECK_DTYPE, Tape, Tensor, no_grad

FD_STEP = 1e-4
REL_TOL = 1e-4
# gradients smaller than this are compared on an absolute scale
MAGNITUDE_FLOOR = 1e-3


@dataclass
class GradCheckResult:
    name: str
    max_rel_err: float
    checked: int
    worst: str = ""

    def ok(self, tol: float = REL_TOL) -> bool:
        return self.max_rel_err <= tol and np.isfinite(self.max_rel_err)


def rel_err(analytic: float, numeric: float, floor: float = MAGNITUDE_FLOOR) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def leaf(data) -> Tensor:
    return Tensor(np.asarray(data, dtype=CHECK_DTYPE), requires_grad=True)


def gradcheck(
    fn: Callable[[], Tensor],
    leaves: Sequence[Tensor],
    name: str = "",
    eps: float = FD_STEP,
    max_per_leaf: int | None = None,
    rng: np.random.Generator | None = None,
) -> GradCheckResult:
    """Compare tape gradients of ``sum(fn() * R)`` with central differences.

    ``fn`` must read the current ``.data`` of every tensor in ``leaves``;
    entries are perturbed in place and restored.  ``max_per_leaf`` samples
    a random subset of coordinates per leaf (``None`` = all).
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    with no_grad():
        probe = fn().data
    proj = rng.standard_normal(probe.shape)

    def scalar() -> float:
        with no_grad():
            return float(np.sum(fn().data * proj))

    for t in leaves:
        t.grad = np.zeros_like(t.data) if hasattr(t, "name") else None
    with Tape() as tape:
        out = fn()
        loss = ops.sum_all(ops.mul(out, Tensor(proj.astype(out.dtype))))
    tape.backward(loss)

    worst, worst_at, checked = 0.0, "", 0
    for li, t in enumerate(leaves):
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_per_leaf is not None and flat.size > max_per_leaf:
            coords = np.sort(rng.choice(flat.size, max_per_leaf, replace=False))
        a_flat = analytic.reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            fp = scalar()
            flat[i] = orig - eps
            fm = scalar()
            flat[i] = orig
            num = (fp - fm) / (2 * eps)
            e = rel_err(float(a_flat[i]), num)
            checked += 1
            if not e <= worst:
                worst = e
                label = getattr(t, "name", "") or f"leaf{li}"
                worst_at = f"{label}[{int(i)}] analytic={a_flat[i]:.6g} numeric={num:.6g}"
    return GradCheckResult(name, worst, checked, worst_at)
