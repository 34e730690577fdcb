"""
verbose-samples — Dense numerical kernel

softmax, entropy, KL-to-uniform, SVD, nuclear norm (+ subgradient) and a
central finite-difference gradient oracle. Everything is float64 and pure:
inputs are never mutated, so the functions are safe from any worker.

Matrix and Distribution are plain numpy arrays; ``as_matrix`` and
``as_distribution`` enforce their invariants.
"""

from __future__ import annotations

import math
from typing import Callable, Sequence

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.special import entr

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError

Matrix = NDArray[np.float64]
Distribution = NDArray[np.float64]

DIST_TOL = 1e-9
SIGMA_REL_TOL = 1e-10


# -------------------------------------------------------------------
# Type guards
# -------------------------------------------------------------------
def as_matrix(data: ArrayLike) -> Matrix:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim != 2:
        raise VerboseSamplesError(
            FailCode.FAIL_SHAPE_MISMATCH, f"matrix must be 2-D, got shape {m.shape}",
        )
    if not np.all(np.isfinite(m)):
        raise VerboseSamplesError(FailCode.FAIL_NON_FINITE, "matrix has non-finite entries")
    return m


def as_distribution(probs: ArrayLike) -> Distribution:
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise VerboseSamplesError(
            FailCode.FAIL_INVALID_DISTRIBUTION, f"distribution must be a non-empty vector, got {p.shape}",
        )
    if np.any(p < 0) or abs(p.sum() - 1.0) > DIST_TOL:
        raise VerboseSamplesError(
            FailCode.FAIL_INVALID_DISTRIBUTION,
            f"entries must be >= 0 and sum to 1 (sum={p.sum():.12f})",
        )
    return p


# -------------------------------------------------------------------
# softmax(l)_i = exp(l_i - max l) / Σ exp(l_j - max l)
# -------------------------------------------------------------------
def softmax(logits: ArrayLike) -> Distribution:
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        bad = int(np.flatnonzero(~np.isfinite(z))[0])
        raise VerboseSamplesError(
            FailCode.FAIL_NON_FINITE, f"softmax input not finite at index {bad}", index=bad,
        )
    e = np.exp(z - z.max())
    return e / e.sum()


# -------------------------------------------------------------------
# H(p) = -Σ p_i ln p_i, with 0·ln 0 = 0
# -------------------------------------------------------------------
def entropy(p: ArrayLike) -> float:
    return float(entr(as_distribution(p)).sum())


# -------------------------------------------------------------------
# D_KL(p ‖ U) = ln V − H(p)
# -------------------------------------------------------------------
def kl_to_uniform(p: ArrayLike) -> float:
    dist = as_distribution(p)
    return max(0.0, math.log(dist.size) - float(entr(dist).sum()))


def kl_to_uniform_softmax_grad(logits: ArrayLike) -> NDArray[np.float64]:
    """Analytic ∂/∂l of kl_to_uniform(softmax(l)): p_j (ln p_j − Σ p_i ln p_i)."""
    p = softmax(logits)
    logp = np.log(np.where(p > 0, p, 1.0))
    return p * (logp - float(np.dot(p, logp)))


def svd(m: ArrayLike) -> tuple[Matrix, NDArray[np.float64], Matrix]:
    """Thin SVD; singular values are nonnegative and descending."""
    mat = as_matrix(m)
    try:
        u, s, vt = np.linalg.svd(mat, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise VerboseSamplesError(
            FailCode.FAIL_SVD_NONCONVERGENCE, str(exc), shape=list(mat.shape),
        ) from exc
    return u, s, vt


# -------------------------------------------------------------------
# ‖M‖_* = Σ σ_i ; ∂‖M‖_* ∋ U_r V_rᵀ over σ_i > 1e-10 · σ_max
# -------------------------------------------------------------------
def nuclear_norm(m: ArrayLike) -> tuple[float, Matrix]:
    u, s, vt = svd(m)
    if s.size == 0:
        return 0.0, np.zeros_like(as_matrix(m))
    keep = s > SIGMA_REL_TOL * s[0]
    sub = u[:, keep] @ vt[keep, :]
    return float(s.sum()), sub


def finite_diff_grad(
    f: Callable[[NDArray[np.float64]], float],
    x: ArrayLike,
    h: float = 1e-5,
    indices: Sequence[int] | None = None,
) -> NDArray[np.float64]:
    """
    Central differences (f(x + h e_i) − f(x − h e_i)) / 2h.

    *x* may have any shape; f receives an array of that shape. When
    *indices* (flat positions) are given only those coordinates are probed
    and the rest of the returned gradient is zero.
    """
    x0 = np.array(x, dtype=np.float64)
    flat = x0.reshape(-1)
    grad = np.zeros_like(flat)
    probe = range(flat.size) if indices is None else indices
    for i in probe:
        orig = flat[i]
        flat[i] = orig + h
        f_plus = float(f(x0))
        flat[i] = orig - h
        f_minus = float(f(x0))
        flat[i] = orig
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(x0.shape)
