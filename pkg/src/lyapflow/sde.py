"""Brownian path generation and strong fixed-step integration of flows.

Integrates the state, the tangent (variational) frame, and the inverse
Jacobian along a shared noise realization.  Noise streams are counter-based
(Philox keyed by ``(seed, path_index)``) so distinct paths are independent and
every stream is exactly reproducible from its arguments.

All stepping is vectorized over leading batch axes; the public single-path API
wraps the same kernels.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

from .coefficients import CoefficientField
from .errors import (
    ExplosionError,
    FrameUnderflowError,
    PreconditionError,
)

EXPLOSION_NORM = 1e12
UNDERFLOW_NORM = 1e-300
_MASK64 = (1 << 64) - 1
_CHUNK = 65_536


# ---------------------------------------------------------------------------
# noise


def _generator(seed: int, path_index: int) -> np.random.Generator:
    key = np.array([seed & _MASK64, path_index & _MASK64], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


@dataclass(frozen=True)
class BrownianPath:
    """Discretized multi-channel Wiener increments with seed provenance."""

    dt: float
    steps: int
    channels: int
    increments: np.ndarray  # (steps, channels), each entry ~ Normal(0, dt)
    seed: int
    path_index: int

    def slice(self, start: int, stop: int) -> "BrownianPath":
        """Sub-path over step range [start, stop); step indices stay aligned."""
        if not 0 <= start < stop <= self.steps:
            raise ValueError(f"invalid step slice [{start}, {stop})")
        return BrownianPath(
            dt=self.dt,
            steps=stop - start,
            channels=self.channels,
            increments=self.increments[start:stop],
            seed=self.seed,
            path_index=self.path_index,
        )


def sample_brownian(
    seed: int, path_index: int, T: float, dt: float, channels: int
) -> BrownianPath:
    """Deterministic Brownian increments over [0, T] with step dt.

    The stream depends only on (seed, path_index, dt, steps, channels);
    distinct (seed, path_index) pairs give independent streams.
    """
    if not (T > 0.0 and 0.0 < dt <= T):
        raise ValueError(f"need 0 < dt <= T, got dt={dt}, T={T}")
    if channels < 0:
        raise ValueError("channels must be non-negative")
    steps = int(round(T / dt))
    if steps < 1:
        raise ValueError("T/dt rounds to zero steps")
    gen = _generator(seed, path_index)
    incr = gen.standard_normal((steps, channels)) * np.sqrt(dt)
    return BrownianPath(
        dt=float(dt),
        steps=steps,
        channels=channels,
        increments=incr,
        seed=int(seed),
        path_index=int(path_index),
    )


def increments_batch(
    seed: int, path_indices: Sequence[int], steps: int, dt: float, channels: int
) -> np.ndarray:
    """Stacked increments of shape (steps, P, channels) for a batch of paths."""
    scale = np.sqrt(dt)
    out = np.empty((steps, len(path_indices), channels))
    for j, pi in enumerate(path_indices):
        out[:, j, :] = _generator(seed, pi).standard_normal((steps, channels)) * scale
    return out


def increment_stream(
    seed: int, path_index: int, dt: float, channels: int, chunk: int = _CHUNK
) -> Iterable[np.ndarray]:
    """Endless chunked increment stream for one path, shape (<=chunk, channels)."""
    gen = _generator(seed, path_index)
    scale = np.sqrt(dt)
    while True:
        yield gen.standard_normal((chunk, channels)) * scale


def increments_block_stream(
    seed: int,
    path_indices: Sequence[int],
    steps: int,
    dt: float,
    channels: int,
    block: int,
) -> Iterable[np.ndarray]:
    """Yield stacked increment blocks of shape (<=block, P, channels).

    Streams the same values as :func:`increments_batch` without materializing
    the full (steps, P, channels) array.
    """
    gens = [_generator(seed, pi) for pi in path_indices]
    scale = np.sqrt(dt)
    done = 0
    while done < steps:
        take = min(block, steps - done)
        out = np.empty((take, len(path_indices), channels))
        for j, gen in enumerate(gens):
            out[:, j, :] = gen.standard_normal((take, channels)) * scale
        yield out
        done += take


# ---------------------------------------------------------------------------
# stepping kernels


def _require_milstein_ok(f: CoefficientField, scheme: str) -> None:
    if scheme not in ("euler_maruyama", "milstein"):
        raise ValueError(f"unknown scheme {scheme!r}")
    if scheme == "milstein" and f.channels > 1 and not f.structure.diagonal_noise_channels:
        raise PreconditionError(
            "milstein needs scalar or diagonal noise; "
            "use euler_maruyama for non-commuting multi-channel noise"
        )


class _StepWork:
    """Preallocated evaluation buffers for one batch shape."""

    def __init__(self, f: CoefficientField, batch: tuple, scheme: str):
        d, n = f.d, f.channels
        self.a = np.empty(batch + (d,))
        self.da = np.empty(batch + (d, d))
        self.b = np.empty(batch + (n, d)) if n else None
        self.db = np.empty(batch + (n, d, d)) if n else None
        self.milstein = scheme == "milstein" and n > 0
        if self.milstein:
            self.c = np.empty(batch + (n, d))
            self.dc = np.empty(batch + (n, d, d))
            self.c_fn, self.dc_fn = f.milstein_terms()
        self.eye = np.eye(d)


def _state_step(f, x, t, dW, dt, work: _StepWork) -> np.ndarray:
    f.eval_drift(x, t, work.a)
    xn = x + work.a * dt
    if f.channels:
        f.eval_diffusion(x, t, work.b)
        xn += (work.b * dW[..., :, None]).sum(axis=-2)
        if work.milstein:
            work.c_fn(x, t, work.c)
            xn += 0.5 * (work.c * (dW * dW - dt)[..., :, None]).sum(axis=-2)
    return xn


def _tangent_factor(f, x, t, dW, dt, work: _StepWork) -> np.ndarray:
    """One-step tangent map M with V_{j+1} = M V_j (same scheme as the state)."""
    f.eval_drift_jacobian(x, t, work.da)
    m = work.da * dt
    m += work.eye
    if f.channels:
        f.eval_diffusion_jacobian(x, t, work.db)
        m = m + (work.db * dW[..., :, None, None]).sum(axis=-3)
        if work.milstein:
            work.dc_fn(x, t, work.dc)
            m = m + 0.5 * (work.dc * (dW * dW - dt)[..., :, None, None]).sum(axis=-3)
    return m


def _check_explosion(x, step: int) -> None:
    norms_sq = (x * x).sum(axis=-1)
    if not np.all(np.isfinite(norms_sq)) or np.any(norms_sq > EXPLOSION_NORM**2):
        bad = float(np.nanmax(norms_sq))
        raise ExplosionError(step, norm=np.sqrt(bad) if np.isfinite(bad) else None)


# ---------------------------------------------------------------------------
# trajectory containers and public single-path integration


@dataclass
class TangentFrames:
    """Recorded flow trajectory with optional Jacobian and inverse-Jacobian frames."""

    times: np.ndarray  # (m,)
    trajectory: np.ndarray  # (m, d)
    jacobian: np.ndarray | None  # (m, d, d), jacobian[0] = I
    inverse_jacobian: np.ndarray | None
    scheme: str
    x0: np.ndarray
    t0: float
    dt: float

    @property
    def d(self) -> int:
        return self.trajectory.shape[1]

    def final_state(self) -> np.ndarray:
        return self.trajectory[-1]

    def final_jacobian(self) -> np.ndarray:
        if self.jacobian is None:
            raise ValueError("jacobian was not propagated")
        return self.jacobian[-1]


def integrate_flow(
    f: CoefficientField,
    x0,
    path: BrownianPath,
    scheme: str = "euler_maruyama",
    t0: float = 0.0,
    record_every: int = 1,
) -> TangentFrames:
    """Integrate the state SDE along a fixed Brownian path (no tangent frames)."""
    return _integrate_single(f, x0, path, scheme, t0, record_every, False, False)


def integrate_tangent(
    f: CoefficientField,
    x0,
    path: BrownianPath,
    scheme: str = "euler_maruyama",
    with_inverse: bool = False,
    t0: float = 0.0,
    record_every: int = 1,
) -> TangentFrames:
    """Integrate the state together with the variational frame V (columns e_l).

    With ``with_inverse`` the inverse frame U is co-propagated by composing the
    exact inverses of the per-step tangent factors, which keeps ``U V = I`` at
    machine precision step by step and discretizes the inverse-Jacobian SDE
    within the same scheme family.
    """
    return _integrate_single(f, x0, path, scheme, t0, record_every, True, with_inverse)


def _integrate_single(f, x0, path, scheme, t0, record_every, tangent, inverse):
    if f.channels != path.channels:
        raise PreconditionError(
            f"field has {f.channels} channels but path has {path.channels}"
        )
    _require_milstein_ok(f, scheme)
    if record_every < 1:
        raise ValueError("record_every must be >= 1")
    x = np.asarray(x0, dtype=np.float64).copy()
    if x.shape != (f.d,):
        raise ValueError(f"x0 must have shape ({f.d},)")
    d = f.d
    dt = path.dt
    work = _StepWork(f, (), scheme)
    v = np.eye(d) if tangent else None
    u = np.eye(d) if inverse else None

    n_rec = path.steps // record_every + 1
    times = np.empty(n_rec)
    traj = np.empty((n_rec, d))
    jac = np.empty((n_rec, d, d)) if tangent else None
    inv = np.empty((n_rec, d, d)) if inverse else None
    times[0] = t0
    traj[0] = x
    if tangent:
        jac[0] = v
    if inverse:
        inv[0] = u

    rec = 1
    for j in range(path.steps):
        t = t0 + j * dt
        dW = path.increments[j]
        if tangent:
            m = _tangent_factor(f, x, t, dW, dt, work)
            v = m @ v
            if inverse:
                u = u @ np.linalg.inv(m)
        x = _state_step(f, x, t, dW, dt, work)
        _check_explosion(x, j)
        if tangent and (j + 1) % 16 == 0:
            col_norms = np.sqrt((v * v).sum(axis=0))
            if np.all(col_norms < UNDERFLOW_NORM):
                raise FrameUnderflowError(j)
        if (j + 1) % record_every == 0:
            times[rec] = t0 + (j + 1) * dt
            traj[rec] = x
            if tangent:
                jac[rec] = v
            if inverse:
                inv[rec] = u
            rec += 1

    return TangentFrames(
        times=times[:rec],
        trajectory=traj[:rec],
        jacobian=jac[:rec] if tangent else None,
        inverse_jacobian=inv[:rec] if inverse else None,
        scheme=scheme,
        x0=np.asarray(x0, dtype=np.float64),
        t0=t0,
        dt=dt,
    )


def invert_jacobians_pointwise(frames: TangentFrames) -> np.ndarray:
    """Debug oracle: invert the recorded Jacobians directly (cross-check for U)."""
    if frames.jacobian is None:
        raise ValueError("jacobian was not propagated")
    return np.linalg.inv(frames.jacobian)


# ---------------------------------------------------------------------------
# batched loops used by estimators


def run_states(
    f: CoefficientField,
    x0: np.ndarray,
    increments: np.ndarray,
    dt: float,
    t0: float = 0.0,
    checkpoint_steps: Sequence[int] = (),
    scheme: str = "euler_maruyama",
) -> np.ndarray:
    """Batched state integration recording at the given step counts.

    ``x0`` has shape (..., d); ``increments`` (steps, ..., n) must broadcast
    against it.  Returns an array of shape (len(checkpoints), ..., d).
    """
    _require_milstein_ok(f, scheme)
    x = np.array(x0, dtype=np.float64)
    steps = increments.shape[0]
    cps = sorted(set(int(c) for c in checkpoint_steps))
    if cps and (cps[0] < 1 or cps[-1] > steps):
        raise ValueError("checkpoints out of range")
    work = _StepWork(f, np.broadcast_shapes(x.shape[:-1], increments.shape[1:-1]), scheme)
    out = np.empty((len(cps),) + np.broadcast_shapes(x.shape, increments.shape[1:-1] + (f.d,)))
    nxt = 0
    for j in range(steps):
        x = _state_step(f, x, t0 + j * dt, increments[j], dt, work)
        _check_explosion(x, j)
        if nxt < len(cps) and (j + 1) == cps[nxt]:
            out[nxt] = x
            nxt += 1
    return out


def run_tangent_checkpoints(
    f: CoefficientField,
    x0: np.ndarray,
    increments: np.ndarray,
    dt: float,
    checkpoint_steps: Sequence[int],
    t0: float = 0.0,
    scheme: str = "euler_maruyama",
    return_states: bool = False,
):
    """Batched tangent integration, recording V (and optionally x) at checkpoints.

    Shapes as in :func:`run_states`; the returned V stack has shape
    (len(checkpoints), ..., d, d).  No renormalization is applied, so this is
    only safe over moderate horizons.
    """
    _require_milstein_ok(f, scheme)
    x = np.array(x0, dtype=np.float64)
    steps = increments.shape[0]
    batch = np.broadcast_shapes(x.shape[:-1], increments.shape[1:-1])
    d = f.d
    v = np.broadcast_to(np.eye(d), batch + (d, d)).copy()
    cps = sorted(set(int(c) for c in checkpoint_steps))
    if not cps or cps[0] < 1 or cps[-1] > steps:
        raise ValueError("checkpoints out of range")
    work = _StepWork(f, batch, scheme)
    vs = np.empty((len(cps),) + batch + (d, d))
    xs = np.empty((len(cps),) + batch + (d,)) if return_states else None
    nxt = 0
    for j in range(steps):
        t = t0 + j * dt
        dW = increments[j]
        m = _tangent_factor(f, x, t, dW, dt, work)
        v = m @ v
        x = _state_step(f, x, t, dW, dt, work)
        _check_explosion(x, j)
        if (j + 1) == cps[nxt]:
            vs[nxt] = v
            if return_states:
                xs[nxt] = np.broadcast_to(x, batch + (d,))
            nxt += 1
            if nxt == len(cps):
                break
    if return_states:
        return vs, xs
    return vs


# ---------------------------------------------------------------------------
# linear-structure helpers


def affine_coefficients(f: CoefficientField):
    """(A, a0, sigma) for autonomous fields dX = (A x + a0) dt + sigma dW.

    Returns None when the field is not affine with state-independent noise.
    sigma has shape (channels, d).
    """
    s = f.structure
    if not s.autonomous or not s.constant_drift_jacobian:
        return None
    if f.channels and not s.additive_noise:
        return None
    zero = np.zeros(f.d)
    a_mat = f.drift_jacobian_at(zero)
    a0 = f.drift_at(zero)
    sigma = f.diffusion_at(zero) if f.channels else np.zeros((0, f.d))
    return a_mat, a0, sigma


def run_affine_diagonal_thinned(
    a_diag: np.ndarray,
    a0: np.ndarray,
    sigma: np.ndarray,
    x0: np.ndarray,
    dt: float,
    n_records: int,
    record_every: int,
    skip_steps: int,
    seed: int,
    path_index: int,
) -> np.ndarray:
    """Exact-recursion sampling of x <- (1 + a dt) x + a0 dt + sigma dW, diagonal A.

    Streams the linear recurrence through an IIR filter in C, recording every
    ``record_every`` steps after ``skip_steps`` burn-in steps.  Returns an
    array of shape (n_records, d).
    """
    d = a_diag.shape[0]
    alpha = 1.0 + a_diag * dt
    total = skip_steps + n_records * record_every
    out = np.empty((n_records, d))
    stream = increment_stream(seed, path_index, dt, sigma.shape[0], chunk=_CHUNK)
    x_prev = np.asarray(x0, dtype=np.float64).copy()
    done = 0
    written = 0
    zi = (alpha * x_prev)[:, None]  # per-coordinate filter state
    while done < total:
        take = min(_CHUNK, total - done)
        dw = next(stream)[:take]
        u = dw @ sigma + a0 * dt  # (take, d)
        ys = np.empty_like(u)
        for jcoord in range(d):
            y, zf = lfilter(
                [1.0], [1.0, -alpha[jcoord]], u[:, jcoord], zi=zi[jcoord]
            )
            ys[:, jcoord] = y
            zi[jcoord] = zf
        # re-anchor filter state so the recursion continues exactly
        hi = float(np.max(np.abs(ys)))
        if not np.isfinite(hi) or hi > EXPLOSION_NORM:
            raise ExplosionError(done, norm=hi if np.isfinite(hi) else None)
        first_record = skip_steps + written * record_every + record_every - 1
        idx = np.arange(first_record - done, take, record_every)
        idx = idx[idx >= 0]
        if idx.size:
            upto = min(idx.size, n_records - written)
            out[written : written + upto] = ys[idx[:upto]]
            written += upto
        done += take
    return out
