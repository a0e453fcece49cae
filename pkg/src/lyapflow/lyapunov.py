"""Lyapunov exponent estimation and flow diagnostics.

Estimators:

* :func:`estimate_spectrum_qr` -- renormalized tangent-frame propagation with
  periodic sign-normalized QR, accumulating log diag(R);
* :func:`estimate_wedge_sum` -- growth rate of the l-th exterior power norm,
  estimating the sum of the l largest exponents;
* :func:`furstenberg_estimate` -- time-one tangent growth averaged against an
  empirical invariant measure.

Structure-aware fast lanes (exact piecewise-constant schedules, closed-form
tangent flows of constant-Jacobian additive-noise fields, scalarized diagonal
recursions) replace the generic stepping loop where the field's structure
makes the result available exactly or orders of magnitude faster; the generic
loop remains the reference implementation and the lanes are tested against it.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import sde
from .coefficients import CoefficientField
from .errors import EstimationFailedError, PreconditionError
from .linalg import qr_positive_stack

_BLOCK_WINDOWS = 512
_MAX_RESTARTS = 3
_DEFAULT_CHECKPOINTS = 512


# ---------------------------------------------------------------------------
# result containers


@dataclass
class LyapunovEstimate:
    """Estimated spectrum with per-path standard errors and provenance."""

    exponents: np.ndarray  # sorted non-increasing
    standard_errors: np.ndarray
    method: str  # qr | wedge | furstenberg | tail_max
    T: float
    dt: float
    paths: int
    seed: int
    config_hash: str
    converged: bool
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        self.exponents = np.asarray(self.exponents, dtype=np.float64)
        self.standard_errors = np.asarray(self.standard_errors, dtype=np.float64)
        if self.paths < 1:
            raise ValueError("paths must be >= 1")
        if not np.all(np.isfinite(self.standard_errors)):
            raise ValueError("standard errors must be finite")

    def to_json_dict(self) -> dict:
        return {
            "exponents": [float(v) for v in self.exponents],
            "standard_errors": [float(v) for v in self.standard_errors],
            "method": self.method,
            "T": float(self.T),
            "dt": float(self.dt),
            "paths": int(self.paths),
            "seed": int(self.seed),
            "config_hash": self.config_hash,
            "converged": bool(self.converged),
        }


@dataclass
class ScalarEstimate:
    """A single estimated growth rate (wedge sums, Furstenberg averages)."""

    value: float
    standard_error: float
    method: str
    T: float
    dt: float
    paths: int
    seed: int
    config_hash: str
    converged: bool

    def to_json_dict(self) -> dict:
        return {
            "exponents": [float(self.value)],
            "standard_errors": [float(self.standard_error)],
            "method": self.method,
            "T": float(self.T),
            "dt": float(self.dt),
            "paths": int(self.paths),
            "seed": int(self.seed),
            "config_hash": self.config_hash,
            "converged": bool(self.converged),
        }


def _config_hash(**kwargs) -> str:
    canon = json.dumps(kwargs, sort_keys=True, default=str)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# lane predicates


def _diag_constant_tangent(f: CoefficientField):
    """(a_diag, s_diag (n,d)) when the tangent factors are constant diagonal."""
    s = f.structure
    if not (
        s.autonomous
        and s.constant_drift_jacobian
        and s.diagonal_drift_jacobian
        and s.constant_diffusion_jacobians
        and s.diagonal_diffusion_jacobians
    ):
        return None
    zero = np.zeros(f.d)
    a_diag = np.diagonal(f.drift_jacobian_at(zero)).copy()
    if f.channels:
        s_diag = np.diagonal(f.diffusion_jacobian_at(zero), axis1=-2, axis2=-1).copy()
    else:
        s_diag = np.zeros((0, f.d))
    return a_diag, s_diag


def _deterministic_tangent_diag(f: CoefficientField):
    """Diagonal of a constant drift Jacobian when the tangent flow is deterministic.

    Applies to fields whose diffusion Jacobians vanish identically (zero or
    additive noise) with constant diagonal DA: the variational flow is then
    exp(DA t) and the exponents are the diagonal entries, exactly.
    """
    pair = _diag_constant_tangent(f)
    if pair is None:
        return None
    a_diag, s_diag = pair
    if s_diag.size and np.any(s_diag != 0.0):
        return None
    return a_diag


# ---------------------------------------------------------------------------
# spectrum estimation


def estimate_spectrum_qr(
    f: CoefficientField,
    T: float,
    dt: float,
    *,
    renorm_every: int = 10,
    paths: int = 16,
    seed: int = 0,
    scheme: str = "euler_maruyama",
    x0=None,
    x0_sampler=None,
    n_checkpoints: int = _DEFAULT_CHECKPOINTS,
) -> LyapunovEstimate:
    """Estimate the full Lyapunov spectrum by renormalized QR propagation.

    For autonomous fields the per-path estimate is the accumulated log of the
    R diagonals divided by the horizon, averaged over paths and over initial
    points drawn from ``x0_sampler`` (an empirical measure); a fixed ``x0`` is
    allowed and flagged in the diagnostics.  Non-autonomous linear fields are
    reported through the tail-max surrogate for the upper limit, with a
    convergence flag comparing the last two quarter-windows.
    """
    if renorm_every < 1:
        raise ValueError("renorm_every must be >= 1")
    if paths < 1:
        raise ValueError("paths must be >= 1")
    if T < 10.0:
        warnings.warn(f"horizon T={T} is short; exponent estimates may be biased")
    chash = _config_hash(
        op="spectrum_qr",
        field=f.field_hash,
        T=T,
        dt=dt,
        renorm_every=renorm_every,
        paths=paths,
        seed=seed,
        scheme=scheme,
        x0=None if x0 is None else list(np.asarray(x0, dtype=float)),
        sampler=getattr(x0_sampler, "provenance_hash", None),
    )

    if f.time_schedule is not None and f.structure.deterministic:
        return _schedule_spectrum(f, T, dt, seed, chash, n_checkpoints)

    a_diag = _deterministic_tangent_diag(f)
    if a_diag is not None:
        order = np.argsort(-a_diag, kind="stable")
        return LyapunovEstimate(
            exponents=a_diag[order],
            standard_errors=np.zeros(f.d),
            method="qr",
            T=T,
            dt=dt,
            paths=paths,
            seed=seed,
            config_hash=chash,
            converged=True,
            diagnostics={"lane": "constant_tangent", "x0_mode": "irrelevant"},
        )

    steps = int(round(T / dt))
    t_eff = steps * dt
    diag_pair = _diag_constant_tangent(f)
    if diag_pair is not None:
        per_path = _diag_accumulate(
            diag_pair, steps, dt, paths, seed, scheme, renorm_every, wedge_l=None
        )[0]
        return _finish_autonomous(
            per_path / t_eff, t_eff, dt, paths, seed, chash, "diag_recursion"
        )

    per_path, checkpoints, restarts = _qr_loop(
        f, steps, dt, renorm_every, paths, seed, scheme, x0, x0_sampler, n_checkpoints
    )
    if not f.structure.autonomous:
        return _tail_max_from_checkpoints(
            checkpoints, t_eff, dt, paths, seed, chash, restarts
        )
    est = _finish_autonomous(
        per_path / t_eff, t_eff, dt, paths, seed, chash, "qr_loop"
    )
    est.diagnostics["restarts"] = restarts
    est.diagnostics["x0_mode"] = "sampler" if x0_sampler is not None else "fixed"
    return est


def _finish_autonomous(per_path, T, dt, paths, seed, chash, lane) -> LyapunovEstimate:
    """Average per-path exponent stacks (paths, d) into a sorted estimate."""
    mean = per_path.mean(axis=0)
    if paths > 1:
        se = per_path.std(axis=0, ddof=1) / np.sqrt(paths)
    else:
        se = np.zeros_like(mean)
    violation = float(max(0.0, np.max(np.diff(mean), initial=-np.inf)))
    order = np.argsort(-mean, kind="stable")
    return LyapunovEstimate(
        exponents=mean[order],
        standard_errors=se[order],
        method="qr",
        T=T,
        dt=dt,
        paths=paths,
        seed=seed,
        config_hash=chash,
        converged=True,
        diagnostics={"lane": lane, "ordering_violation": violation},
    )


def _schedule_spectrum(f, T, dt, seed, chash, n_checkpoints) -> LyapunovEstimate:
    """Exact lane for deterministic piecewise-constant diagonal linear drift.

    The flow is diag(exp(int a_j)); running averages are evaluated in closed
    form on a checkpoint grid, so very long horizons cost nothing and carry no
    discretization bias.  The estimate is the tail-max surrogate.
    """
    times = np.linspace(T / n_checkpoints, T, n_checkpoints)
    running = f.time_schedule.running_averages(times)  # (d, K)
    q4 = running[:, -(n_checkpoints // 4) :]
    q3 = running[:, -(n_checkpoints // 2) : -(n_checkpoints // 4)]
    lam = q4.max(axis=1)
    prev = q3.max(axis=1)
    scale = np.maximum(1.0, np.abs(lam))
    converged = bool(np.all(np.abs(lam - prev) / scale < 0.05))
    order = np.argsort(-lam, kind="stable")
    return LyapunovEstimate(
        exponents=lam[order],
        standard_errors=np.zeros(f.d),
        method="tail_max",
        T=T,
        dt=dt,
        paths=1,
        seed=seed,
        config_hash=chash,
        converged=converged,
        diagnostics={"lane": "schedule_exact"},
    )


def _draw_x0(f, paths, seed, x0, x0_sampler) -> np.ndarray:
    if x0_sampler is not None:
        pts = np.asarray(x0_sampler.points, dtype=np.float64)
        if pts.ndim == 1:
            pts = pts[:, None]
        rng = np.random.default_rng(seed ^ 0x5EED)
        idx = rng.choice(
            pts.shape[0], size=paths, p=np.asarray(x0_sampler.weights, dtype=float)
        )
        return pts[idx]
    if x0 is None:
        x0 = np.zeros(f.d)
    return np.broadcast_to(np.asarray(x0, dtype=np.float64), (paths, f.d)).copy()


def _qr_loop(
    f, steps, dt, renorm_every, paths, seed, scheme, x0, x0_sampler, n_checkpoints
):
    """Reference batched QR estimator loop.

    Returns (per-path accumulated logs (paths, d), checkpoint running averages
    (n_cp, paths, d) with their times, restart count).
    """
    d = f.d
    x = _draw_x0(f, paths, seed, x0, x0_sampler)
    frame = np.broadcast_to(np.eye(d), (paths, d, d)).copy()
    acc = np.zeros((paths, d))
    restarts = np.zeros(paths, dtype=int)
    work = sde._StepWork(f, (paths,), scheme)
    cp_every = max(1, steps // n_checkpoints)
    cp_times: list[float] = []
    cp_vals: list[np.ndarray] = []
    step = 0
    block = max(1024, _BLOCK_WINDOWS * renorm_every)
    stream = sde.increments_block_stream(
        seed, list(range(paths)), steps, dt, f.channels, block=block
    ) if f.channels else None
    zeros_dw = np.zeros((paths, 0))
    pending = None
    taken = 0
    while step < steps:
        if f.channels:
            if pending is None or taken >= pending.shape[0]:
                pending = next(stream)
                taken = 0
            dw = pending[taken]
            taken += 1
        else:
            dw = zeros_dw
        t = step * dt
        m = sde._tangent_factor(f, x, t, dw, dt, work)
        frame = m @ frame
        x = sde._state_step(f, x, t, dw, dt, work)
        sde._check_explosion(x, step)
        step += 1
        if step % renorm_every == 0 or step == steps:
            q, logr, bad = qr_positive_stack(frame)
            if np.any(bad):
                restarts += bad.astype(int)
                if np.any(restarts > _MAX_RESTARTS):
                    raise EstimationFailedError(
                        "tangent frame degenerated more than "
                        f"{_MAX_RESTARTS} times; the spectrum may be singular"
                    )
                logr[bad] = 0.0
            acc += logr
            frame = q
        if step % cp_every == 0 or step == steps:
            cp_times.append(step * dt)
            cp_vals.append(acc / (step * dt))
    checkpoints = (np.asarray(cp_times), np.asarray(cp_vals))
    return acc, checkpoints, int(restarts.max(initial=0))


def _tail_max_from_checkpoints(
    checkpoints, T, dt, paths, seed, chash, restarts
) -> LyapunovEstimate:
    times, vals = checkpoints  # vals: (n_cp, paths, d)
    mean_vals = vals.mean(axis=1)  # (n_cp, d)
    n_cp = len(times)
    if n_cp < 8:
        lam = mean_vals[-1]
        per_path_final = vals[-1]
        se = (
            per_path_final.std(axis=0, ddof=1) / np.sqrt(paths)
            if paths > 1
            else np.zeros(per_path_final.shape[1])
        )
        order = np.argsort(-lam, kind="stable")
        return LyapunovEstimate(
            exponents=lam[order],
            standard_errors=se[order],
            method="tail_max",
            T=T,
            dt=dt,
            paths=paths,
            seed=seed,
            config_hash=chash,
            converged=False,
            diagnostics={"lane": "qr_loop_tail_max", "restarts": restarts},
        )
    q4 = mean_vals[-(n_cp // 4) :]
    q3 = mean_vals[-(n_cp // 2) : -(n_cp // 4)]
    lam = q4.max(axis=0)
    prev = q3.max(axis=0)
    scale = np.maximum(1.0, np.abs(lam))
    converged = bool(np.all(np.abs(lam - prev) / scale < 0.05))
    per_path_final = vals[-1]
    se = (
        per_path_final.std(axis=0, ddof=1) / np.sqrt(paths)
        if paths > 1
        else np.zeros(per_path_final.shape[1])
    )
    order = np.argsort(-lam, kind="stable")
    return LyapunovEstimate(
        exponents=lam[order],
        standard_errors=se[order],
        method="tail_max",
        T=T,
        dt=dt,
        paths=paths,
        seed=seed,
        config_hash=chash,
        converged=converged,
        diagnostics={"lane": "qr_loop_tail_max", "restarts": restarts},
    )


def _diag_accumulate(diag_pair, steps, dt, paths, seed, scheme, renorm_every, wedge_l):
    """Scalarized tangent recursion for constant diagonal Jacobians.

    Per coordinate the one-step factor is 1 + a_j dt + sum_i s_ij dW_i (plus
    the Milstein term for scheme='milstein').  Returns (per-path accumulated
    logs (paths, d), per-path accumulated window wedge logs (paths,) or None).
    """
    a_diag, s_diag = diag_pair
    d = a_diag.shape[0]
    n = s_diag.shape[0]
    acc = np.zeros((paths, d))
    wedge_acc = np.zeros(paths) if wedge_l is not None else None
    base = 1.0 + a_diag * dt  # (d,)
    milstein = scheme == "milstein" and n > 0
    block = 512 * renorm_every
    done = 0
    rem_win = np.zeros((paths, d))
    rem_count = 0
    for dw in sde.increments_block_stream(
        seed, list(range(paths)), steps, dt, n, block=block
    ) if n else _zero_blocks(steps, paths, block):
        take = dw.shape[0]
        if n:
            factors = base + np.einsum("spn,nd->spd", dw, s_diag)
            if milstein:
                factors = factors + 0.5 * np.einsum(
                    "spn,nd->spd", dw * dw - dt, s_diag * s_diag
                )
        else:
            factors = np.broadcast_to(base, (take, paths, d)).copy()
        logs = np.log(np.abs(factors))
        acc += logs.sum(axis=0)
        if wedge_l is not None:
            wedge_acc += _window_wedge(logs, renorm_every, wedge_l, rem_win, rem_count)
            rem_count = (rem_count + take) % renorm_every
        done += take
        if done >= steps:
            break
    if wedge_l is not None and rem_count:
        top = np.sort(rem_win, axis=-1)[:, ::-1][:, :wedge_l]
        wedge_acc += top.sum(axis=-1)
    return acc, wedge_acc


def _zero_blocks(steps, paths, block):
    done = 0
    while done < steps:
        take = min(block, steps - done)
        yield np.zeros((take, paths, 0))
        done += take


def _window_wedge(logs, renorm_every, l, rem_win, rem_count):
    """Sum of top-l per-coordinate log factors over complete renorm windows.

    ``rem_win`` carries the partial window across block boundaries (mutated).
    """
    take, paths, d = logs.shape
    out = np.zeros(paths)
    pos = 0
    if rem_count:
        need = renorm_every - rem_count
        chunk = logs[:need]
        rem_win += chunk.sum(axis=0)
        pos = chunk.shape[0]
        if rem_count + pos == renorm_every:
            top = np.sort(rem_win, axis=-1)[:, ::-1][:, :l]
            out += top.sum(axis=-1)
            rem_win[:] = 0.0
    full = (take - pos) // renorm_every
    if full > 0:
        wins = logs[pos : pos + full * renorm_every].reshape(
            full, renorm_every, paths, d
        )
        wsum = wins.sum(axis=1)  # (full, paths, d)
        top = np.sort(wsum, axis=-1)[..., ::-1][..., :l]
        out += top.sum(axis=(-1, 0))
        pos += full * renorm_every
    if pos < take:
        rem_win += logs[pos:].sum(axis=0)
    return out


# ---------------------------------------------------------------------------
# wedge-sum estimation


def estimate_wedge_sum(
    f: CoefficientField,
    l: int,
    T: float,
    dt: float,
    *,
    renorm_every: int = 10,
    paths: int = 16,
    seed: int = 0,
    scheme: str = "euler_maruyama",
    x0=None,
    x0_sampler=None,
) -> ScalarEstimate:
    """Estimate the sum of the l largest exponents from exterior-power growth.

    Accumulates log wedge norms of per-window R factors of the renormalized
    frame, which avoids overflow on long horizons.
    """
    if not 1 <= l <= f.d:
        raise ValueError(f"l={l} out of range [1, {f.d}]")
    chash = _config_hash(
        op="wedge_sum",
        field=f.field_hash,
        l=l,
        T=T,
        dt=dt,
        renorm_every=renorm_every,
        paths=paths,
        seed=seed,
        scheme=scheme,
    )
    if f.time_schedule is not None and f.structure.deterministic:
        n_cp = _DEFAULT_CHECKPOINTS
        times = np.linspace(T / n_cp, T, n_cp)
        integrals = np.stack(
            [e.integral(times) for e in f.time_schedule.entries]
        )  # (d, K)
        tops = np.sort(integrals, axis=0)[::-1][:l].sum(axis=0) / times
        q4 = tops[-(n_cp // 4) :]
        q3 = tops[-(n_cp // 2) : -(n_cp // 4)]
        value = float(q4.max())
        converged = bool(
            abs(value - q3.max()) / max(1.0, abs(value)) < 0.05
        )
        return ScalarEstimate(
            value, 0.0, "tail_max", T, dt, 1, seed, chash, converged
        )

    a_diag = _deterministic_tangent_diag(f)
    if a_diag is not None:
        value = float(np.sort(a_diag)[::-1][:l].sum())
        return ScalarEstimate(value, 0.0, "wedge", T, dt, paths, seed, chash, True)

    steps = int(round(T / dt))
    t_eff = steps * dt
    diag_pair = _diag_constant_tangent(f)
    if diag_pair is not None:
        _, wedge_acc = _diag_accumulate(
            diag_pair, steps, dt, paths, seed, scheme, renorm_every, wedge_l=l
        )
        per_path = wedge_acc / t_eff
        se = per_path.std(ddof=1) / np.sqrt(paths) if paths > 1 else 0.0
        return ScalarEstimate(
            float(per_path.mean()), float(se), "wedge", t_eff, dt, paths, seed,
            chash, True,
        )

    per_path = _wedge_loop(f, l, steps, dt, renorm_every, paths, seed, scheme, x0, x0_sampler)
    per_path = per_path / t_eff
    se = per_path.std(ddof=1) / np.sqrt(paths) if paths > 1 else 0.0
    return ScalarEstimate(
        float(per_path.mean()), float(se), "wedge", t_eff, dt, paths, seed, chash, True
    )


def _wedge_loop(f, l, steps, dt, renorm_every, paths, seed, scheme, x0, x0_sampler):
    d = f.d
    x = _draw_x0(f, paths, seed, x0, x0_sampler)
    frame = np.broadcast_to(np.eye(d), (paths, d, d)).copy()
    acc = np.zeros(paths)
    work = sde._StepWork(f, (paths,), scheme)
    stream = (
        sde.increments_block_stream(
            seed, list(range(paths)), steps, dt, f.channels, block=1024
        )
        if f.channels
        else None
    )
    zeros_dw = np.zeros((paths, 0))
    pending = None
    taken = 0
    for step in range(steps):
        if f.channels:
            if pending is None or taken >= pending.shape[0]:
                pending = next(stream)
                taken = 0
            dw = pending[taken]
            taken += 1
        else:
            dw = zeros_dw
        t = step * dt
        m = sde._tangent_factor(f, x, t, dw, dt, work)
        frame = m @ frame
        x = sde._state_step(f, x, t, dw, dt, work)
        sde._check_explosion(x, step)
        if (step + 1) % renorm_every == 0 or (step + 1) == steps:
            q, r = np.linalg.qr(frame)
            sv = np.linalg.svd(r, compute_uv=False)  # (paths, d), non-increasing
            acc += np.log(sv[:, :l]).sum(axis=1)
            frame = q
    return acc


# ---------------------------------------------------------------------------
# Furstenberg time-one averaging


def furstenberg_estimate(
    f: CoefficientField,
    mu,
    l: int,
    samples: int,
    dt: float,
    seed: int = 0,
    scheme: str = "euler_maruyama",
) -> ScalarEstimate:
    """Average time-one exterior-power growth against an empirical measure.

    Draws initial points from ``mu`` and independent unit-time paths, then
    returns the mean of ln ||wedge^l DPhi(x, 1)||.  When ``mu`` approximates an
    invariant measure this estimates the sum of the l largest exponents.
    """
    if not f.structure.autonomous:
        raise PreconditionError("time-one averaging requires an autonomous field")
    if not 1 <= l <= f.d:
        raise ValueError(f"l={l} out of range [1, {f.d}]")
    pts = np.asarray(mu.points, dtype=np.float64)
    if pts.size == 0:
        raise ValueError("empirical measure is empty")
    if pts.ndim == 1:
        pts = pts[:, None]
    chash = _config_hash(
        op="furstenberg",
        field=f.field_hash,
        l=l,
        samples=samples,
        dt=dt,
        seed=seed,
        scheme=scheme,
    )
    rng = np.random.default_rng(seed ^ 0xF0F0)
    idx = rng.choice(pts.shape[0], size=samples, p=np.asarray(mu.weights, dtype=float))
    x0 = pts[idx]
    steps = int(round(1.0 / dt))

    diag_pair = _diag_constant_tangent(f)
    if diag_pair is not None:
        acc, _ = _diag_accumulate(
            diag_pair, steps, dt, samples, seed, scheme, renorm_every=steps, wedge_l=None
        )
        per_sample = np.sort(acc, axis=1)[:, ::-1][:, :l].sum(axis=1)
    else:
        incr = sde.increments_batch(seed, list(range(samples)), steps, dt, f.channels)
        v = sde.run_tangent_checkpoints(
            f, x0, incr, dt, checkpoint_steps=[steps], scheme=scheme
        )[0]
        sv = np.linalg.svd(v, compute_uv=False)
        per_sample = np.log(sv[:, :l]).sum(axis=1)
    se = per_sample.std(ddof=1) / np.sqrt(samples) if samples > 1 else 0.0
    return ScalarEstimate(
        float(per_sample.mean()),
        float(se),
        "furstenberg",
        1.0,
        dt,
        samples,
        seed,
        chash,
        True,
    )


# ---------------------------------------------------------------------------
# diagnostics


def check_subadditivity(
    f: CoefficientField,
    l: int,
    m: int,
    n: int,
    trials: int,
    seed: int = 0,
    dt: float = 1e-3,
    scheme: str = "euler_maruyama",
    x0_radius: float = 1.0,
) -> float:
    """Maximum signed violation of the wedge-norm subadditivity over trials.

    On each trial the tangent flow over [0, m+n] is compared with the
    composition of the flows over [0, m] and [m, m+n] on the same path:
    ln||w^l V(m+n)|| <= ln||w^l V2|| + ln||w^l V1||.  Discrete Jacobians
    compose exactly, so violations are floating-point noise.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be positive integers")
    if not 1 <= l <= f.d:
        raise ValueError(f"l={l} out of range [1, {f.d}]")
    rng = np.random.default_rng(seed ^ 0x5AB)
    x0 = rng.uniform(-x0_radius, x0_radius, size=(trials, f.d))
    steps_m = int(round(m / dt))
    steps_total = int(round((m + n) / dt))
    incr = sde.increments_batch(seed, list(range(trials)), steps_total, dt, f.channels)

    d = f.d
    x = x0.copy()
    v = np.broadcast_to(np.eye(d), (trials, d, d)).copy()
    work = sde._StepWork(f, (trials,), scheme)
    v1 = None
    for j in range(steps_total):
        t = j * dt
        dw = incr[j]
        mfac = sde._tangent_factor(f, x, t, dw, dt, work)
        if j == steps_m:
            v1 = v
            v = np.broadcast_to(np.eye(d), (trials, d, d)).copy()
        v = mfac @ v
        x = sde._state_step(f, x, t, dw, dt, work)
        sde._check_explosion(x, j)
    v2 = v
    v_total = v2 @ v1

    def logwedge(mat):
        sv = np.linalg.svd(mat, compute_uv=False)
        return np.log(sv[:, :l]).sum(axis=1)

    violation = logwedge(v_total) - logwedge(v1) - logwedge(v2)
    return float(violation.max())


@dataclass
class MomentBoundRow:
    t: float
    empirical: float
    upper_confidence: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.upper_confidence <= self.bound


def check_moment_bound(
    f: CoefficientField,
    t_list: Sequence[float],
    paths: int = 256,
    seed: int = 0,
    dt: float = 1e-3,
    scheme: str = "euler_maruyama",
) -> list[MomentBoundRow]:
    """One-sided check of E||Phi_{0,t}||^2 <= 3 d exp(3 K^2 t^2 + 3 K^2 t).

    Requires a linear field with declared Jacobian bound K and a single noise
    channel; the pass criterion compares the 99% upper confidence limit of the
    empirical mean against the bound.
    """
    if not f.structure.linear_in_x:
        raise PreconditionError("moment bound applies to linear fields only")
    if f.channels > 1:
        raise PreconditionError("moment bound check supports a single channel")
    K = f.metadata.jacobian_bound
    if K is None:
        raise ValueError("field metadata must declare the coefficient bound K")
    if paths < 2:
        raise ValueError("need at least 2 paths for a confidence limit")
    t_list = sorted(float(t) for t in t_list)
    steps = [int(round(t / dt)) for t in t_list]
    incr = sde.increments_batch(seed, list(range(paths)), steps[-1], dt, f.channels)
    vs = sde.run_tangent_checkpoints(
        f, np.zeros((paths, f.d)), incr, dt, checkpoint_steps=steps, scheme=scheme
    )
    rows = []
    z99 = 2.3263478740408408  # one-sided 99% normal quantile
    for t, v in zip(t_list, vs):
        sq = np.linalg.svd(v, compute_uv=False)[:, 0] ** 2
        meanv = float(sq.mean())
        ucl = meanv + z99 * float(sq.std(ddof=1)) / np.sqrt(paths)
        bound = 3.0 * f.d * float(np.exp(3.0 * K * K * t * t + 3.0 * K * K * t))
        rows.append(MomentBoundRow(t=t, empirical=meanv, upper_confidence=ucl, bound=bound))
    return rows
