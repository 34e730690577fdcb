"""
verbose-samples — Nonparametric direction checks and length histograms
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any, Sequence

import numpy as np
from scipy import stats

from verbose_samples.core.fail_codes import FailCode, VerboseSamplesError


@dataclass
class StatOutcome:
    statistic: float
    p_value: float
    n: int

    def as_dict(self) -> dict[str, Any]:
        return {"statistic": self.statistic, "p_value": self.p_value, "n": self.n}


def mann_whitney(a: Sequence[float], b: Sequence[float], alternative: str = "two-sided") -> StatOutcome:
    """U test of a against b."""
    x, y = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if x.size == 0 or y.size == 0:
        raise VerboseSamplesError(FailCode.FAIL_EMPTY_INPUT, "Mann–Whitney needs two non-empty samples")
    res = stats.mannwhitneyu(x, y, alternative=alternative)
    return StatOutcome(float(res.statistic), float(res.pvalue), int(x.size + y.size))


def sign_test(treated: Sequence[float], control: Sequence[float]) -> StatOutcome:
    """One-sided paired sign test of treated > control; ties dropped."""
    d = np.asarray(treated, dtype=np.float64) - np.asarray(control, dtype=np.float64)
    wins, n = int((d > 0).sum()), int((d != 0).sum())
    if n == 0:
        return StatOutcome(0.0, 1.0, 0)
    res = stats.binomtest(wins, n, 0.5, alternative="greater")
    return StatOutcome(float(wins), float(res.pvalue), n)


def uniform_counts_test(values: Sequence[int], categories: Sequence[int]) -> StatOutcome:
    """χ² goodness of fit of *values* to a uniform distribution over *categories*."""
    v = np.asarray(values)
    observed = np.array([(v == c).sum() for c in categories], dtype=np.float64)
    if observed.sum() == 0:
        raise VerboseSamplesError(FailCode.FAIL_EMPTY_INPUT, "no values to test")
    res = stats.chisquare(observed)
    return StatOutcome(float(res.statistic), float(res.pvalue), int(observed.sum()))


@dataclass
class LengthHistogram:
    edges: list[float]
    counts: list[int]
    median: float
    other_counts: list[int] | None = None
    other_median: float | None = None
    test: StatOutcome | None = None

    def as_dict(self) -> dict[str, Any]:
        return {
            "edges": self.edges,
            "counts": self.counts,
            "median": self.median,
            "other_counts": self.other_counts,
            "other_median": self.other_median,
            "mann_whitney": None if self.test is None else self.test.as_dict(),
        }

    def rows(self, label: str = "lengths", other_label: str = "other") -> list[dict[str, Any]]:
        out = []
        for i, c in enumerate(self.counts):
            row = {"bin_lo": self.edges[i], "bin_hi": self.edges[i + 1], label: c}
            if self.other_counts is not None:
                row[other_label] = self.other_counts[i]
            out.append(row)
        return out


def length_histogram(
    lengths: Sequence[int],
    bins: int = 10,
    other: Sequence[int] | None = None,
) -> LengthHistogram:
    """Bin counts over a common range, medians, and a two-sided U test against *other*."""
    x = np.asarray(lengths, dtype=np.float64)
    if x.size == 0:
        raise VerboseSamplesError(FailCode.FAIL_EMPTY_INPUT, "length_histogram needs >= 1 record")
    pooled = x if other is None else np.concatenate([x, np.asarray(other, dtype=np.float64)])
    lo, hi = float(pooled.min()), float(pooled.max())
    rng = (lo - 0.5, hi + 0.5) if lo == hi else (lo, hi)
    counts, edges = np.histogram(x, bins=bins, range=rng)
    hist = LengthHistogram(
        edges=[float(e) for e in edges],
        counts=[int(c) for c in counts],
        median=float(np.median(x)),
    )
    if other is not None and len(other):
        y = np.asarray(other, dtype=np.float64)
        oc, _ = np.histogram(y, bins=edges)
        hist.other_counts = [int(c) for c in oc]
        hist.other_median = float(np.median(y))
        hist.test = mann_whitney(x, y)
    return hist
