"""Central finite-difference check of the analytic gradients."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericError
from .tensor import Tensor, no_grad


@dataclass
class GradcheckReport:
    max_rel_error: float
    max_abs_error: float
    n_checked: int
    tol: float
    worst: tuple[int, int] | None = None  # (input index, flat index)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol

    def __bool__(self) -> bool:
        return self.passed


def _evaluate(f, tensors) -> float:
    with no_grad():
        val = f(*tensors).data
    if val.size != 1:
        raise ValueError(f"gradcheck: function must return a scalar, got shape {val.shape}")
    val = float(val)
    if not np.isfinite(val):
        raise NumericError(f"gradcheck: function value is not finite ({val})")
    return val


def gradcheck(
    f: Callable[..., Tensor],
    inputs: Sequence,
    eps: float = 1e-5,
    tol: float = 1e-4,
    skip: Sequence[np.ndarray | None] | None = None,
    floor: float = 1e-6,
) -> GradcheckReport:
    """Compare backprop gradients with ``(f(x+eps) - f(x-eps)) / 2eps``.

    ``inputs`` may be numpy arrays (wrapped as fresh float64 leaves) or
    existing tensors such as network parameters; tensors are perturbed in
    place and restored, so ``f`` may ignore its arguments and read the
    parameters from a closure. ``skip`` holds optional boolean masks marking
    coordinates to leave out, e.g. kink points of ``abs_diff``.

    The per-coordinate relative error is ``|a - n| / max(|a|, |n|, floor)``.
    """
    tensors = []
    for x in inputs:
        if isinstance(x, Tensor):
            x.grad = None
            tensors.append(x)
        else:
            tensors.append(Tensor(np.array(x, dtype=np.float64), requires_grad=True))

    out = f(*tensors)
    if not np.all(np.isfinite(out.data)):
        raise NumericError("gradcheck: function value is not finite")
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    max_rel = 0.0
    max_abs = 0.0
    worst = None
    n_checked = 0
    for i, t in enumerate(tensors):
        mask = None if skip is None or skip[i] is None else np.asarray(skip[i], dtype=bool).ravel()
        flat = t.data.flat  # writes reach the live tensor
        ga = analytic[i].reshape(-1)
        for k in range(t.data.size):
            if mask is not None and mask[k]:
                continue
            orig = flat[k]
            flat[k] = orig + eps
            fp = _evaluate(f, tensors)
            flat[k] = orig - eps
            fm = _evaluate(f, tensors)
            flat[k] = orig
            num = (fp - fm) / (2 * eps)
            err = abs(float(ga[k]) - num)
            rel = err / max(abs(float(ga[k])), abs(num), floor)
            n_checked += 1
            max_abs = max(max_abs, err)
            if rel > max_rel:
                max_rel = rel
                worst = (i, k)
    for t in tensors:
        t.grad = None
    return GradcheckReport(max_rel, max_abs, n_checked, tol, worst)
