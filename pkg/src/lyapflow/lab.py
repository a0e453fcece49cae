"""Config-driven experiments: exponent continuity along coefficient families,
Lipschitz/Hoelder modulus estimation, and deterministic report emission.

Family members are always integrated against the identical noise realization
(common random numbers), so a zero perturbation produces exactly zero exponent
gaps and parametric families get minimum-variance gap estimates.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .coefficients import (
    CoefficientField,
    PerturbationFamily,
    check_monotonicity,
    diffusion_delta,
    drift_delta,
    empirical_lpp_norm,
    verify_almost_uniform,
)
from .errors import LyapflowError, PreconditionError
from .lyapunov import LyapunovEstimate, estimate_spectrum_qr
from .measure import EmpiricalMeasure, sample_invariant_measure, weak_distance


@dataclass
class SimConfig:
    """Shared simulation parameters for experiments."""

    T: float = 100.0
    dt: float = 1e-3
    paths: int = 16
    seed: int = 0
    renorm_every: int = 10
    scheme: str = "euler_maruyama"
    burn_in: float = 10.0
    measure_n: int = 10_000
    thinning: float = 0.05
    au_n_max: int = 10_000
    threads: int = 1


@dataclass
class VerdictPolicy:
    """Thresholds for the experiment verdicts (documented defaults).

    Verdicts encode "consistent with the statement", never "statement
    verified"; every threshold is configurable.
    """

    se_factor: float = 2.0
    gap_atol: float = 1e-8
    curve_factor: float = 1.5
    min_r2: float = 0.9
    decay_slack: float = 1.5


@dataclass
class ReportRow:
    k: int
    coefficient_distance: float
    distance_norm: str
    gaps: list[float]
    ses: list[float]
    member_exponents: list[float]
    weak_dist: float | None = None
    converged: bool = True
    failed: bool = False

    def to_dict(self) -> dict:
        return {
            "k": int(self.k),
            "coefficient_distance": float(self.coefficient_distance),
            "distance_norm": self.distance_norm,
            "gaps": [float(g) for g in self.gaps],
            "ses": [float(s) for s in self.ses],
            "member_exponents": [float(v) for v in self.member_exponents],
            "weak_distance": None if self.weak_dist is None else float(self.weak_dist),
            "converged": bool(self.converged),
            "failed": bool(self.failed),
        }


@dataclass
class ExperimentReport:
    kind: str  # continuity_linear | continuity_autonomous | lipschitz | holder
    rows: list[ReportRow]
    verdict: str  # consistent | inconsistent | inconclusive
    base_estimate: dict
    config_hash: str
    fitted: dict | None = None
    policy: VerdictPolicy = field(default_factory=VerdictPolicy)
    diagnostics: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return max((len(r.gaps) for r in self.rows), default=1)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "verdict": self.verdict,
            "config_hash": self.config_hash,
            "base": self.base_estimate,
            "rows": [r.to_dict() for r in self.rows],
            "fitted": self.fitted,
            "policy": asdict(self.policy),
            "diagnostics": self.diagnostics,
        }


def _hash_config(**kwargs) -> str:
    return hashlib.sha256(
        json.dumps(kwargs, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def _estimate(f: CoefficientField, sim: SimConfig, sampler=None) -> LyapunovEstimate:
    return estimate_spectrum_qr(
        f,
        sim.T,
        sim.dt,
        renorm_every=sim.renorm_every,
        paths=sim.paths,
        seed=sim.seed,
        scheme=sim.scheme,
        x0_sampler=sampler,
    )


def _map_members(fam, k_list, fn, threads: int):
    """Evaluate ``fn(k)`` for each k, optionally in parallel, in stable order."""
    if threads <= 1 or len(k_list) <= 1:
        return [fn(k) for k in k_list]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, k_list))


def _schedule_sup_distance(base: CoefficientField, member: CoefficientField) -> float:
    """sup_t of the max-column matrix norm of the diagonal drift difference."""
    out = 0.0
    for eb, em in zip(base.time_schedule.entries, member.time_schedule.entries):
        cuts = sorted(set(eb.breakpoints) | set(em.breakpoints))
        for c in cuts:
            out = max(out, abs(float(eb(c)) - float(em(c))))
    return out


def _box_sup_distance(
    base: CoefficientField, member: CoefficientField, seed: int, radius: float = 3.0
) -> float:
    """Seeded-box sup of |A_k - A| + sum_i |B_ik - B_i| (Euclidean values)."""
    rng = np.random.default_rng(seed ^ 0xD15)
    x = rng.uniform(-radius, radius, size=(512, base.d))
    da = member.drift_at(x) - base.drift_at(x)
    total = np.sqrt((da * da).sum(axis=-1))
    if base.channels:
        db = member.diffusion_at(x) - base.diffusion_at(x)
        total = total + np.sqrt((db * db).sum(axis=-1)).sum(axis=-1)
    return float(total.max())


# ---------------------------------------------------------------------------
# continuity experiments


def run_continuity_experiment(
    fam: PerturbationFamily,
    k_list: Sequence[int],
    sim: SimConfig,
    policy: VerdictPolicy | None = None,
    with_measures: bool | None = None,
) -> ExperimentReport:
    """Estimate exponent gaps along a family and judge their decay.

    Linear non-autonomous families are checked against the almost-uniform
    convergence criterion (verdict recorded as a diagnostic; the criterion is
    sufficient, not necessary) and compared on the top exponent.  Autonomous
    families compare the full spectrum and attach weak-convergence diagnostics
    between member and base invariant measures.
    """
    policy = policy or VerdictPolicy()
    k_list = sorted(int(k) for k in k_list)
    if not k_list:
        raise ValueError("k_list must be non-empty")
    linear_kind = fam.base.time_schedule is not None or not fam.base.structure.autonomous
    kind = "continuity_linear" if linear_kind else "continuity_autonomous"
    if with_measures is None:
        with_measures = not linear_kind

    diagnostics: dict = {}
    if fam.kind == "schedule":
        au = verify_almost_uniform(fam, n_max=sim.au_n_max, k_list=k_list)
        diagnostics["almost_uniform"] = au.verdict
        diagnostics["almost_uniform_cesaro"] = {
            str(k): float(v) for k, v in au.cesaro_values.items()
        }

    base_measure = None
    if with_measures:
        base_measure = sample_invariant_measure(
            fam.base, sim.burn_in, sim.measure_n, sim.thinning, sim.dt, seed=sim.seed
        )
    base_est = _estimate(fam.base, sim, sampler=base_measure)
    top_only = linear_kind

    def eval_member(k: int) -> ReportRow:
        try:
            member = fam.member(k)
            sampler = None
            wd = None
            if with_measures:
                member_measure = sample_invariant_measure(
                    member, sim.burn_in, sim.measure_n, sim.thinning, sim.dt,
                    seed=sim.seed,
                )
                sampler = member_measure
                wd = weak_distance(member_measure, base_measure)
            est = _estimate(member, sim, sampler=sampler)
            if member.time_schedule is not None:
                dist, norm_name = _schedule_sup_distance(fam.base, member), "sup_t_colmax"
            else:
                dist, norm_name = _box_sup_distance(fam.base, member, sim.seed), "box_sup"
            take = 1 if top_only else len(est.exponents)
            gaps = [
                abs(float(est.exponents[i]) - float(base_est.exponents[i]))
                for i in range(take)
            ]
            ses = [
                float(math.hypot(est.standard_errors[i], base_est.standard_errors[i]))
                for i in range(take)
            ]
            return ReportRow(
                k=k,
                coefficient_distance=dist,
                distance_norm=norm_name,
                gaps=gaps,
                ses=ses,
                member_exponents=[float(v) for v in est.exponents],
                weak_dist=wd,
                converged=bool(est.converged and base_est.converged),
            )
        except LyapflowError:
            return ReportRow(
                k=k, coefficient_distance=float("nan"), distance_norm="none",
                gaps=[], ses=[], member_exponents=[], converged=False, failed=True,
            )

    rows = _map_members(fam, k_list, eval_member, sim.threads)
    verdict = derive_continuity_verdict(rows, policy)
    chash = _hash_config(
        op=kind, family=fam.base.field_hash, k_list=k_list, sim=asdict(sim)
    )
    return ExperimentReport(
        kind=kind,
        rows=rows,
        verdict=verdict,
        base_estimate=base_est.to_json_dict(),
        config_hash=chash,
        policy=policy,
        diagnostics=diagnostics,
    )


def derive_continuity_verdict(rows: Sequence[ReportRow], policy: VerdictPolicy) -> str:
    """Pure verdict function over report rows.

    consistent: gaps non-increasing in k (within noise) and the final gaps
    either vanish (within se_factor * SE + gap_atol) or have decayed at least
    proportionally to 1/k within decay_slack.  Failed members cap the verdict
    at inconclusive, as does any unset convergence flag.
    """
    if any(r.failed for r in rows):
        return "inconclusive"
    if any(not r.converged for r in rows):
        return "inconclusive"
    width = max(len(r.gaps) for r in rows)
    if width == 0:
        return "inconclusive"
    ks = [r.k for r in rows]
    for i in range(width):
        gaps = [r.gaps[i] for r in rows if len(r.gaps) > i]
        ses = [r.ses[i] for r in rows if len(r.gaps) > i]
        if len(gaps) != len(rows):
            return "inconclusive"
        for j in range(len(gaps) - 1):
            slack = policy.se_factor * (ses[j] + ses[j + 1]) + policy.gap_atol
            if gaps[j + 1] > gaps[j] + slack:
                return "inconsistent"
        final_tol = policy.se_factor * ses[-1] + policy.gap_atol
        if gaps[-1] <= final_tol:
            continue
        # decay route: gap_k shrinks at least like 1/k within the slack factor
        if gaps[0] > 0 and gaps[-1] <= policy.decay_slack * gaps[0] * ks[0] / ks[-1]:
            continue
        return "inconsistent"
    return "consistent"


# ---------------------------------------------------------------------------
# Lipschitz / Hoelder modulus experiments


def _loglog_fit(xs: np.ndarray, ys: np.ndarray):
    """Least-squares fit ln y = ln c + alpha ln x; returns (c, alpha, r2)."""
    lx, ly = np.log(xs), np.log(ys)
    if len(xs) < 2 or np.ptp(lx) == 0.0:
        return float(ys[0] / xs[0]), 1.0, 1.0
    alpha, lnc = np.polyfit(lx, ly, 1)
    resid = ly - (lnc + alpha * lx)
    ss_tot = float(((ly - ly.mean()) ** 2).sum())
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - float((resid**2).sum()) / ss_tot
    return float(np.exp(lnc)), float(alpha), float(r2)


def run_lipschitz_experiment(
    fam: PerturbationFamily,
    p: float,
    k_list: Sequence[int],
    sim: SimConfig,
    mode: str = "lipschitz",
    policy: VerdictPolicy | None = None,
    mu: EmpiricalMeasure | None = None,
) -> ExperimentReport:
    """Regress exponent gaps on coefficient distances in the L^{p,p}(mu) norm.

    The distance x_k = ||A_k - A||_{p,p} + sum_i ||B_ik - B_i||_{p,p} is
    measured against the base invariant measure only.  Lipschitz mode fits
    y = slope * x; Hoelder mode fits y = c * x^alpha by log-log regression and
    reports the estimated alpha (it is not assumed equal to the declared one).
    """
    if p <= 2:
        raise ValueError("the modulus norm requires p > 2")
    if mode not in ("lipschitz", "holder"):
        raise ValueError(f"unknown mode {mode!r}")
    policy = policy or VerdictPolicy()
    k_list = sorted(int(k) for k in k_list)
    base = fam.base
    mono = check_monotonicity(base, seed=sim.seed)
    if mono.holds_with_lambda is None:
        raise PreconditionError(
            "the base field fails the strict monotonicity (dissipativity) "
            f"condition: sup Q = {mono.worst_value:.4g} >= 0; the modulus "
            "experiment has no contraction certificate"
        )
    if mu is None:
        mu = sample_invariant_measure(
            base, sim.burn_in, sim.measure_n, sim.thinning, sim.dt, seed=sim.seed
        )
    base_est = _estimate(base, sim, sampler=mu)

    def eval_member(k: int) -> ReportRow:
        try:
            member = fam.member(k)
            dist = empirical_lpp_norm(drift_delta(member, base), mu, p).lpp
            for ch in range(base.channels):
                dist += empirical_lpp_norm(diffusion_delta(member, base, ch), mu, p).lpp
            est = _estimate(member, sim, sampler=mu)
            gaps = [
                abs(float(a) - float(b))
                for a, b in zip(est.exponents, base_est.exponents)
            ]
            ses = [
                float(math.hypot(a, b))
                for a, b in zip(est.standard_errors, base_est.standard_errors)
            ]
            return ReportRow(
                k=k,
                coefficient_distance=float(dist),
                distance_norm=f"lpp(p={p:g})",
                gaps=gaps,
                ses=ses,
                member_exponents=[float(v) for v in est.exponents],
                converged=bool(est.converged and base_est.converged),
            )
        except LyapflowError:
            return ReportRow(
                k=k, coefficient_distance=float("nan"), distance_norm="none",
                gaps=[], ses=[], member_exponents=[], converged=False, failed=True,
            )

    rows = _map_members(fam, k_list, eval_member, sim.threads)
    fitted = fit_modulus(rows, mode)
    verdict = derive_modulus_verdict(rows, fitted, mode, policy)
    chash = _hash_config(
        op=mode, family=base.field_hash, p=p, k_list=k_list, sim=asdict(sim)
    )
    return ExperimentReport(
        kind=mode,
        rows=rows,
        verdict=verdict,
        base_estimate=base_est.to_json_dict(),
        config_hash=chash,
        fitted=fitted,
        policy=policy,
        diagnostics={"monotonicity_lambda": float(mono.holds_with_lambda)},
    )


def fit_modulus(rows: Sequence[ReportRow], mode: str) -> dict | None:
    """Fit the top-exponent gaps against coefficient distances."""
    pts = [
        (r.coefficient_distance, r.gaps[0])
        for r in rows
        if not r.failed and r.gaps and r.gaps[0] > 0.0 and r.coefficient_distance > 0.0
    ]
    if not pts:
        all_zero = all((not r.failed) and r.gaps and r.gaps[0] == 0.0 for r in rows)
        if all_zero and rows:
            return {"slope": 0.0, "exponent": None, "r2": None}
        return None
    xs = np.array([x for x, _ in pts])
    ys = np.array([y for _, y in pts])
    slope = float((xs @ ys) / (xs @ xs))
    c, alpha, r2 = _loglog_fit(xs, ys)
    return {"slope": slope, "exponent": alpha, "r2": r2, "prefactor": c}


def derive_modulus_verdict(
    rows: Sequence[ReportRow], fitted: dict | None, mode: str, policy: VerdictPolicy
) -> str:
    """Pure verdict function: fit quality plus per-row curve domination."""
    if any(r.failed or not r.converged for r in rows):
        return "inconclusive"
    if fitted is None:
        return "inconclusive"
    if fitted.get("r2") is None:
        return "consistent"  # zero perturbation: all gaps exactly zero
    if fitted["r2"] < policy.min_r2:
        return "inconsistent"
    for r in rows:
        if not r.gaps:
            return "inconclusive"
        x = r.coefficient_distance
        if mode == "lipschitz":
            curve = fitted["slope"] * x
        else:
            curve = fitted["prefactor"] * x ** fitted["exponent"]
        for gap, se in zip(r.gaps, r.ses):
            if gap > curve * policy.curve_factor + policy.se_factor * se + policy.gap_atol:
                return "inconsistent"
    return "consistent"


# ---------------------------------------------------------------------------
# report emission


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return "true" if x else "false"
    if isinstance(x, float):
        return repr(x)
    return str(x)


def emit_report(report: ExperimentReport, out_dir: str) -> list[str]:
    """Write report.json, rows.csv and plotdata.csv; reruns are byte-identical.

    rows.csv columns: k, distance, gap_1..gap_d, se_1..se_d, weak_distance,
    converged, failed.  plotdata.csv holds the log-log pairs used for modulus
    fitting (rows with zero gap or distance are excluded).
    """
    os.makedirs(out_dir, exist_ok=True)
    d = report.d
    written = []

    path = os.path.join(out_dir, "report.json")
    with open(path, "w") as fh:
        json.dump(report.to_dict(), fh, sort_keys=True, indent=2)
        fh.write("\n")
    written.append(path)

    header = (
        ["k", "distance"]
        + [f"gap_{i + 1}" for i in range(d)]
        + [f"se_{i + 1}" for i in range(d)]
        + ["weak_distance", "converged", "failed"]
    )
    lines = [",".join(header)]
    for r in report.rows:
        gaps = list(r.gaps) + [None] * (d - len(r.gaps))
        ses = list(r.ses) + [None] * (d - len(r.ses))
        cells = (
            [_fmt(r.k), _fmt(float(r.coefficient_distance))]
            + [_fmt(g) for g in gaps]
            + [_fmt(s) for s in ses]
            + [_fmt(r.weak_dist), _fmt(r.converged), _fmt(r.failed)]
        )
        lines.append(",".join(cells))
    path = os.path.join(out_dir, "rows.csv")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    written.append(path)

    plot_lines = ["log_distance,log_gap"]
    for r in report.rows:
        if r.failed or not r.gaps:
            continue
        if r.coefficient_distance > 0.0 and r.gaps[0] > 0.0:
            plot_lines.append(
                f"{_fmt(float(np.log(r.coefficient_distance)))},"
                f"{_fmt(float(np.log(r.gaps[0])))}"
            )
    path = os.path.join(out_dir, "plotdata.csv")
    with open(path, "w") as fh:
        fh.write("\n".join(plot_lines) + "\n")
    written.append(path)
    return written
