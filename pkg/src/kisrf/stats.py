"""Paired t-test for comparing policies on matched score vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import stdtr


@dataclass(frozen=True)
class TTestResult:
    """Two-sided paired t-test outcome.

    ``degenerate`` is set when the differences have zero variance; the p-value
    is then undefined (NaN) rather than 0 or 1.
    """

    t: float
    p: float
    dof: int
    degenerate: bool

    def to_dict(self) -> dict:
        return {"t": self.t, "p": self.p, "dof": self.dof, "degenerate": self.degenerate}


def paired_t_test(a, b) -> TTestResult:
    """Two-sided paired t-test on matched samples.

    The statistic is computed directly (mean difference over its standard
    error); the p-value uses the exact Student-t CDF.

    Raises:
        ValueError: length mismatch or fewer than 2 pairs.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"need two equal-length 1-d samples, got {a.shape} vs {b.shape}")
    n = a.shape[0]
    if n < 2:
        raise ValueError(f"need at least 2 pairs, got {n}")
    diff = a - b
    mean = diff.mean()
    sd = diff.std(ddof=1)
    dof = n - 1
    if sd == 0.0:
        t = 0.0 if mean == 0.0 else math.copysign(math.inf, mean)
        return TTestResult(t=t, p=math.nan, dof=dof, degenerate=True)
    t = mean / (sd / math.sqrt(n))
    p = 2.0 * (1.0 - float(stdtr(dof, abs(t))))
    return TTestResult(t=float(t), p=p, dof=dof, degenerate=False)
