"""
verbose-samples — Feasibility gate

Checks a perturbed sample against its original before it is accepted:
finite pixels, every pixel in [0, 1], per-frame L∞ ≤ ε + tol, same shape.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any

import numpy as np
from numpy.typing import NDArray

FEASIBILITY_TOL = 1e-12


@dataclass
class GateResult:
    """Result of the feasibility gate check."""

    passed: bool = False
    fail_reasons: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)
    max_linf: float = 0.0
    slack: float = 0.0

    def as_dict(self) -> dict[str, Any]:
        return {
            "passed": self.passed,
            "fail_reasons": self.fail_reasons,
            "warnings": self.warnings,
            "max_linf": self.max_linf,
            "slack": self.slack,
        }


@dataclass
class FeasibilityGate:
    """
    Checks:
    • shapes agree
    • all pixels finite and in [0, 1]
    • ‖X′_j − X_j‖_∞ ≤ ε + tol for every frame j
      (hence the mean-of-norms video constraint)
    """

    epsilon: float
    tol: float = FEASIBILITY_TOL

    def check(self, perturbed: NDArray[np.float64], original: NDArray[np.float64]) -> GateResult:
        result = GateResult()
        fails: list[str] = []
        warns: list[str] = []
        x, x0 = np.asarray(perturbed), np.asarray(original)

        if x.shape != x0.shape:
            result.fail_reasons = [f"shape {x.shape} differs from original {x0.shape}"]
            return result

        # --- finiteness and range
        if not np.all(np.isfinite(x)):
            fails.append("non-finite pixels")
        else:
            lo, hi = float(x.min()), float(x.max())
            if lo < 0.0 or hi > 1.0:
                fails.append(f"pixels outside [0, 1]: min={lo:.6g} max={hi:.6g}")

        # --- per-frame L∞ budget
        per_frame = np.abs(x - x0).reshape(x.shape[0], -1).max(axis=1) if x.size else np.zeros(0)
        max_linf = float(per_frame.max()) if per_frame.size else 0.0
        for j, d in enumerate(per_frame):
            if d > self.epsilon + self.tol:
                fails.append(f"frame {j}: L∞={d:.6g} > ε={self.epsilon:.6g}")
        if per_frame.size > 1 and float(per_frame.mean()) > self.epsilon + self.tol:
            fails.append(f"mean frame L∞={float(per_frame.mean()):.6g} > ε")
        if max_linf == 0.0:
            warns.append("perturbation is identically zero")

        result.max_linf = max_linf
        result.slack = self.epsilon - max_linf
        result.fail_reasons = fails
        result.warnings = warns
        result.passed = len(fails) == 0
        return result
