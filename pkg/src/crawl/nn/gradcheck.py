"""Central finite-difference checks of the hand-written backward passes."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .tensor import Tape, Tensor


@dataclass
class GradCheckReport:
    name: str
    errors: dict[str, float] = field(default_factory=dict)
    tolerance: float = 1e-4

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.max_error < self.tolerance

    def __str__(self) -> str:
        flag = "ok  " if self.passed else "FAIL"
        return f"[{flag}] {self.name}: max rel err {self.max_error:.2e} (tol {self.tolerance:.0e})"


ZERO_GRAD_NORM = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-relative error; absolute when both gradients are essentially zero.

    Parameters feeding straight into a batch norm (biases before it) have an
    exact zero gradient, where a ratio would only measure rounding noise.
    """
    diff = np.linalg.norm(analytic - numeric)
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric))
    if scale < ZERO_GRAD_NORM:
        return float(diff)
    return float(diff / scale)


def grad_check(
    fn: Callable[..., Tensor],
    inputs: dict[str, np.ndarray],
    tolerance: float = 1e-4,
    h: float = 1e-5,
    seed: int = 0,
    name: str = "op",
) -> GradCheckReport:
    """Compare tape gradients of ``sum(R * fn(**inputs))`` with central differences.

    ``fn`` receives one :class:`Tensor` per input plus ``tape=``; ``R`` is a
    fixed random projection so every output entry contributes.
    """
    inputs = {k: np.array(v, dtype=np.float64) for k, v in inputs.items()}
    tensors = {k: Tensor(v.copy()) for k, v in inputs.items()}
    tape = Tape()
    out = fn(**tensors, tape=tape)
    proj = np.random.default_rng(seed).standard_normal(out.shape)
    tape.backward(out, proj)

    def objective() -> float:
        vals = {k: Tensor(v) for k, v in inputs.items()}
        return float(np.sum(proj * fn(**vals, tape=None).value))

    report = GradCheckReport(name, tolerance=tolerance)
    for key, arr in inputs.items():
        analytic = tensors[key].grad
        if analytic is None:
            analytic = np.zeros_like(arr)
        numeric = np.zeros_like(arr)
        flat = arr.reshape(-1)
        nflat = numeric.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = objective()
            flat[i] = orig - h
            fm = objective()
            flat[i] = orig
            nflat[i] = (fp - fm) / (2 * h)
        report.errors[key] = relative_error(analytic, numeric)
    return report
