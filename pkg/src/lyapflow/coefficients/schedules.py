"""Piecewise-constant time schedules for non-autonomous linear drift coefficients.

A schedule is a right-continuous step function on [0, inf) with finitely many
breakpoints.  Diagonal drift schedules admit exact flow integration, which the
spectrum estimator exploits to evaluate very long horizons without stepping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import FamilySpecError


@dataclass(frozen=True)
class PiecewiseConstant:
    """Step function: value ``values[j]`` on [breakpoints[j], breakpoints[j+1])."""

    breakpoints: tuple[float, ...]  # ascending, breakpoints[0] == 0.0
    values: tuple[float, ...]
    _cum: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=np.float64)
        vals = np.asarray(self.values, dtype=np.float64)
        if bp.ndim != 1 or bp.size == 0 or bp[0] != 0.0:
            raise FamilySpecError("breakpoints must start at 0.0")
        if np.any(np.diff(bp) <= 0.0):
            raise FamilySpecError("breakpoints must be strictly increasing")
        if vals.shape != bp.shape:
            raise FamilySpecError("values and breakpoints must have equal length")
        if not np.all(np.isfinite(vals)):
            raise FamilySpecError("schedule values must be finite")
        # cumulative integral of the step function up to each breakpoint
        cum = np.concatenate([[0.0], np.cumsum(vals[:-1] * np.diff(bp))])
        object.__setattr__(self, "_cum", cum)

    @classmethod
    def constant(cls, value: float) -> "PiecewiseConstant":
        return cls((0.0,), (float(value),))

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        idx = np.searchsorted(self.breakpoints, t, side="right") - 1
        idx = np.clip(idx, 0, len(self.values) - 1)
        out = np.asarray(self.values, dtype=np.float64)[idx]
        return out if out.ndim else float(out)

    def integral(self, t):
        """Exact integral of the step function over [0, t] (vectorized)."""
        t = np.asarray(t, dtype=np.float64)
        bp = np.asarray(self.breakpoints)
        idx = np.clip(np.searchsorted(bp, t, side="right") - 1, 0, len(bp) - 1)
        vals = np.asarray(self.values)
        out = self._cum[idx] + vals[idx] * (t - bp[idx])
        return out if out.ndim else float(out)

    def with_patch(self, start: float, end: float, value: float) -> "PiecewiseConstant":
        """Return a copy equal to ``value`` on [start, end) (end may be math.inf)."""
        if start < 0.0 or end <= start:
            raise FamilySpecError(f"invalid patch interval [{start}, {end})")
        bp = list(self.breakpoints)
        vals = list(self.values)
        # rebuild the piece list with the patch overlaid
        new: list[tuple[float, float]] = []
        for j, (b, v) in enumerate(zip(bp, vals)):
            nxt = bp[j + 1] if j + 1 < len(bp) else math.inf
            lo, hi = b, nxt
            if hi <= start or lo >= end:
                new.append((lo, v))
                continue
            if lo < start:
                new.append((lo, v))
            new.append((max(lo, start), value))
            if hi > end:
                new.append((end, v))
        # merge adjacent equal-valued pieces and drop zero-length ones
        merged: list[tuple[float, float]] = []
        for b, v in sorted(new):
            if merged and merged[-1][1] == v:
                continue
            if merged and merged[-1][0] == b:
                merged[-1] = (b, v)
                continue
            merged.append((b, v))
        bks = tuple(b for b, _ in merged)
        vls = tuple(v for _, v in merged)
        return PiecewiseConstant(bks, vls)

    def difference_support(self, other: "PiecewiseConstant", lo: float, hi: float):
        """Disjoint intervals within [lo, hi) where self and other differ."""
        cuts = sorted(
            {lo, hi}
            | {b for b in self.breakpoints if lo < b < hi}
            | {b for b in other.breakpoints if lo < b < hi}
        )
        out = []
        for a, b in zip(cuts[:-1], cuts[1:]):
            if float(self(a)) != float(other(a)):
                if out and out[-1][1] == a:
                    out[-1] = (out[-1][0], b)
                else:
                    out.append((a, b))
        return [(float(a), float(b)) for a, b in out]


@dataclass(frozen=True)
class DiagonalSchedule:
    """Diagonal drift A(t) = diag(entries[0](t), ..., entries[d-1](t))."""

    entries: tuple[PiecewiseConstant, ...]

    @property
    def dim(self) -> int:
        return len(self.entries)

    def matrix(self, t) -> np.ndarray:
        return np.diag([e(t) for e in self.entries])

    def running_averages(self, times) -> np.ndarray:
        """Exact (1/t) * integral of each diagonal entry at the given times.

        Returns shape (d, len(times)).  These are the per-coordinate running
        log-growth averages of the induced deterministic flow.
        """
        times = np.asarray(times, dtype=np.float64)
        if np.any(times <= 0.0):
            raise ValueError("running averages need strictly positive times")
        return np.stack([e.integral(times) / times for e in self.entries])
