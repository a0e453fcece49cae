"""Indexed coefficient-perturbation families (A_k, B_k) approaching a base (A, B).

Three specification styles are supported:

* ``parametric``  -- members share the base expressions with parameter values
                     depending on the index k (e.g. theta_k = theta + 1/k);
* ``pointwise``   -- member expressions mention k directly as a parameter;
* ``schedule``    -- non-autonomous linear members given by patching a
                     piecewise-constant diagonal drift schedule on declared
                     time intervals (bumps).

Schedule families carry explicit per-unit-interval support sets: the time
intervals inside [i-1, i) on which member k is allowed to differ from the
base.  ``verify_almost_uniform`` checks the vanishing-Cesaro criterion on the
square roots of their lengths, the sufficient condition for continuity of the
top exponent of linear flows.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from ..errors import FamilySpecError
from . import expressions as ex
from .fields import CoefficientField, FieldMetadata, from_diagonal_schedule, parse_field
from .schedules import DiagonalSchedule, PiecewiseConstant

ALMOST_UNIFORM_TOL = 1e-3


@dataclass
class Bump:
    """Replace coordinate ``coord`` of the diagonal drift by ``value`` on [start, end)."""

    coord: int
    start_expr: ex.Expr
    end_expr: ex.Expr  # may evaluate to +inf
    value: float

    def interval(self, k: int) -> tuple[float, float]:
        start = _eval_k(self.start_expr, k)
        end = _eval_k(self.end_expr, k)
        if not (0.0 <= start < end):
            raise FamilySpecError(f"bump interval [{start}, {end}) is invalid")
        return start, end


def _eval_k(expr: ex.Expr, k: int) -> float:
    return float(ex.evaluate(ex.bind(expr, {"k": float(k)}), np.zeros(1), 0.0))


def _parse_k_expr(text) -> ex.Expr:
    if isinstance(text, (int, float)):
        return ex.Const(float(text))
    if isinstance(text, str) and text.strip() in ("inf", "+inf"):
        return ex.Const(math.inf)
    return ex.parse(str(text), 0, {"k"})


class PerturbationFamily:
    """Base field plus an indexed member constructor with support bookkeeping."""

    def __init__(self, base: CoefficientField, kind: str, builder, bumps_for=None):
        self.base = base
        self.kind = kind
        self._builder = builder
        self._bumps_for = bumps_for
        self._cache: dict[int, CoefficientField] = {}

    def member(self, k: int) -> CoefficientField:
        k = int(k)
        if k < 1:
            raise FamilySpecError("family index k must be a positive integer")
        if k not in self._cache:
            self._cache[k] = self._builder(k)
        return self._cache[k]

    def support_set(self, k: int, i: int) -> list[tuple[float, float]]:
        """Disjoint sub-intervals of [i-1, i) where member k may differ from the base."""
        if i < 1:
            raise ValueError("unit-interval index i must be >= 1")
        if self._bumps_for is None:
            return []
        lo, hi = float(i - 1), float(i)
        pieces: list[tuple[float, float]] = []
        for start, end in self._bumps_for(int(k)):
            a, b = max(lo, start), min(hi, end)
            if a < b:
                pieces.append((a, b))
        pieces.sort()
        for (a1, b1), (a2, b2) in zip(pieces[:-1], pieces[1:]):
            if a2 < b1:
                raise FamilySpecError(
                    f"support intervals overlap in [{lo}, {hi}): "
                    f"({a1}, {b1}) and ({a2}, {b2})"
                )
        return pieces

    def support_lengths(self, k: int, n_max: int) -> np.ndarray:
        """L(U_{k,i}) for i = 1..n_max."""
        out = np.zeros(n_max)
        if self._bumps_for is None:
            return out
        for start, end in self._bumps_for(int(k)):
            end = min(end, float(n_max))
            if end <= start:
                continue
            i_lo = int(math.floor(start))
            i_hi = int(math.ceil(end))
            for i in range(i_lo, min(i_hi, n_max)):
                a, b = max(start, float(i)), min(end, float(i + 1))
                if a < b:
                    out[i] += b - a
        return out


def build_perturbation_family(spec: Mapping) -> PerturbationFamily:
    """Construct a family from a specification mapping (see module docstring)."""
    kind = spec.get("kind")
    if kind == "parametric":
        return _build_parametric(spec)
    if kind == "pointwise":
        return _build_pointwise(spec)
    if kind == "schedule":
        return _build_schedule(spec)
    raise FamilySpecError(f"unknown family kind {kind!r}")


def _field_spec(spec: Mapping) -> tuple[list, list, dict, int, int]:
    fs = spec["field"]
    drift = list(fs["drift"])
    diffusion = [list(v) for v in fs.get("diffusion", [])]
    params = dict(fs.get("params", {}))
    d = int(fs.get("d", len(drift)))
    n = int(fs.get("channels", len(diffusion)))
    return drift, diffusion, params, d, n


def _build_parametric(spec: Mapping) -> PerturbationFamily:
    drift, diffusion, params, d, n = _field_spec(spec)
    schedule = spec.get("schedule", {})
    param_exprs = {
        name: _parse_k_expr(text) for name, text in schedule.get("param_exprs", {}).items()
    }
    explicit = schedule.get("param_values", {})
    base = parse_field(drift, diffusion, params, d, n)

    def builder(k: int) -> CoefficientField:
        member_params = dict(params)
        for name, expr in param_exprs.items():
            member_params[name] = _eval_k(expr, k)
        for name, values in explicit.items():
            member_params[name] = float(values[str(k)] if isinstance(values, dict) else values[k - 1])
        return parse_field(drift, diffusion, member_params, d, n)

    return PerturbationFamily(base, "parametric", builder)


def _build_pointwise(spec: Mapping) -> PerturbationFamily:
    drift, diffusion, params, d, n = _field_spec(spec)
    base_params = dict(params)
    base_overrides = spec.get("schedule", {}).get("base_params", {})
    base_params.update(base_overrides)
    base_drift = spec.get("schedule", {}).get("base_drift", drift)
    base_diffusion = spec.get("schedule", {}).get("base_diffusion", diffusion)
    base = parse_field(base_drift, base_diffusion, base_params, d, n)

    def builder(k: int) -> CoefficientField:
        member_params = dict(params)
        member_params["k"] = float(k)
        return parse_field(drift, diffusion, member_params, d, n)

    return PerturbationFamily(base, "pointwise", builder)


def _build_schedule(spec: Mapping) -> PerturbationFamily:
    schedule = spec.get("schedule", {})
    diag = schedule.get("diagonal")
    if diag is None:
        raise FamilySpecError("schedule families need schedule.diagonal")
    entries = []
    for entry in diag:
        if isinstance(entry, (int, float)):
            entries.append(PiecewiseConstant.constant(float(entry)))
        else:
            bps = tuple(float(b) for b, _ in entry)
            vals = tuple(float(v) for _, v in entry)
            entries.append(PiecewiseConstant(bps, vals))
    base_schedule = DiagonalSchedule(tuple(entries))
    bump_specs = [
        Bump(
            coord=int(b["coord"]),
            start_expr=_parse_k_expr(b["start"]),
            end_expr=_parse_k_expr(b["end"]),
            value=float(b["value"]),
        )
        for b in schedule.get("bumps", [])
    ]
    for b in bump_specs:
        if not 0 <= b.coord < base_schedule.dim:
            raise FamilySpecError(f"bump coordinate {b.coord} out of range")
    K = float(
        max(
            [abs(v) for e in entries for v in e.values]
            + [abs(b.value) for b in bump_specs]
            + [0.0]
        )
    )
    base = from_diagonal_schedule(base_schedule, FieldMetadata(jacobian_bound=K))

    def builder(k: int) -> CoefficientField:
        patched = list(base_schedule.entries)
        for b in bump_specs:
            start, end = b.interval(k)
            patched[b.coord] = patched[b.coord].with_patch(start, end, b.value)
        return from_diagonal_schedule(
            DiagonalSchedule(tuple(patched)), FieldMetadata(jacobian_bound=K)
        )

    def bumps_for(k: int) -> list[tuple[float, float]]:
        return [b.interval(k) for b in bump_specs]

    return PerturbationFamily(base, "schedule", builder, bumps_for=bumps_for)


@dataclass
class AlmostUniformReport:
    """Finite-horizon surrogate for the vanishing-Cesaro support criterion."""

    cesaro_values: dict[int, float]
    verdict: str  # holds | fails | inconclusive
    tolerance: float = ALMOST_UNIFORM_TOL


def verify_almost_uniform(
    fam: PerturbationFamily,
    n_max: int,
    k_list: Sequence[int],
    tolerance: float = ALMOST_UNIFORM_TOL,
) -> AlmostUniformReport:
    """Check that support-set lengths vanish in Cesaro square-root average.

    Computes s_k(n) = (1/n) sum_{i<=n} sqrt(L(U_{k,i})) for n <= n_max and the
    tail surrogate s-hat_k = max of the last quarter of the running averages.
    Verdict ``holds`` when s-hat is non-increasing in k and below tolerance at
    the largest k; ``fails`` when it stabilizes above 10x the tolerance;
    ``inconclusive`` otherwise.
    """
    if n_max < 8:
        raise ValueError("n_max must be at least 8")
    if not k_list:
        raise ValueError("k_list must be non-empty")
    ks = sorted(int(k) for k in k_list)
    shat: dict[int, float] = {}
    for k in ks:
        lengths = fam.support_lengths(k, n_max)
        roots = np.sqrt(lengths)
        running = np.cumsum(roots) / np.arange(1, n_max + 1)
        tail = running[-(n_max // 4) :]
        shat[k] = float(tail.max())
    vals = [shat[k] for k in ks]
    non_increasing = all(b <= a + 1e-15 for a, b in zip(vals[:-1], vals[1:]))
    if non_increasing and vals[-1] < tolerance:
        verdict = "holds"
    elif vals[-1] >= 10.0 * tolerance:
        verdict = "fails"
    else:
        verdict = "inconclusive"
    return AlmostUniformReport(cesaro_values=shat, verdict=verdict, tolerance=tolerance)
