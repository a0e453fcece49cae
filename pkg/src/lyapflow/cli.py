"""Command-line frontend binding JSON experiment configs to library operations.

Subcommands: spectrum, estimate, measure, continuity, lipschitz, verify.
All randomness flows from the single config seed; outputs embed a stable hash
of the canonicalized config so artifacts from different configs are
distinguishable, and identical runs are byte-identical.

Exit codes: 0 success, 2 config error, 3 numerical failure, 4 inconclusive or
failed verdict under --strict.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

import numpy as np

from . import lab, lyapunov, measure, sde
from .coefficients import (
    build_perturbation_family,
    check_monotonicity,
    parse_field,
    FieldMetadata,
)
from .errors import LyapflowError, PreconditionError
from .lyapunov import check_moment_bound, check_subadditivity

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_INCONCLUSIVE = 4

_NUMERICAL_ERRORS = (
    "ExplosionError",
    "EstimationFailedError",
    "NonDissipativeError",
    "DegenerateFrameError",
    "FrameUnderflowError",
)


class ConfigError(ValueError):
    pass


def _canonical_hash(config: dict) -> str:
    return hashlib.sha256(
        json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]


def _write_json(path: str, obj: dict) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2)
        fh.write("\n")


def _load_config(path: str, args) -> tuple[dict, str]:
    try:
        with open(path) as fh:
            config = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}")
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}")
    if not isinstance(config, dict):
        raise ConfigError("config root must be a JSON object")
    sim = config.setdefault("simulation", {})
    if args.seed is not None:
        sim["seed"] = int(args.seed)
    if args.paths is not None:
        sim["paths"] = int(args.paths)
    if args.threads is not None:
        sim["threads"] = int(args.threads)
    out = config.setdefault("output", {})
    if args.out is not None:
        out["out_dir"] = args.out
    if args.dump_paths:
        out["dump_paths"] = True
    return config, _canonical_hash(config)


def _build_field(config: dict):
    fs = config.get("field")
    if not isinstance(fs, dict):
        raise ConfigError("config needs a 'field' object")
    try:
        meta = FieldMetadata(
            jacobian_bound=fs.get("jacobian_bound"),
            lipschitz_seminorm=fs.get("lipschitz_seminorm"),
            holder_exponent=fs.get("holder_exponent"),
        )
        return parse_field(
            fs["drift"],
            fs.get("diffusion", []),
            fs.get("params", {}),
            fs.get("d"),
            fs.get("channels"),
            metadata=meta,
        )
    except KeyError as exc:
        raise ConfigError(f"field spec is missing {exc}")
    except LyapflowError as exc:
        raise ConfigError(f"bad field spec: {exc}")
    except ValueError as exc:
        raise ConfigError(f"bad field spec: {exc}")


def _build_family(config: dict):
    fam_spec = config.get("family")
    if not isinstance(fam_spec, dict):
        raise ConfigError("config needs a 'family' object")
    fam_spec = dict(fam_spec)
    fam_spec.setdefault("field", config.get("field"))
    try:
        return build_perturbation_family(fam_spec)
    except (LyapflowError, KeyError, ValueError, TypeError) as exc:
        raise ConfigError(f"bad family spec: {exc}")


def _sim_config(config: dict) -> lab.SimConfig:
    sim = dict(config.get("simulation", {}))
    meas = dict(config.get("measure", {}))
    kwargs = {}
    for key in ("T", "dt", "paths", "seed", "renorm_every", "scheme", "threads"):
        if key in sim:
            kwargs[key] = sim[key]
    if "burn_in" in meas:
        kwargs["burn_in"] = float(meas["burn_in"])
    if "n" in meas:
        kwargs["measure_n"] = int(meas["n"])
    if "thinning" in meas:
        kwargs["thinning"] = float(meas["thinning"])
    try:
        cfg = lab.SimConfig(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad simulation config: {exc}")
    _validate_sim(cfg)
    return cfg


def _validate_sim(cfg: lab.SimConfig) -> None:
    if cfg.T <= 0 or cfg.dt <= 0 or cfg.dt > cfg.T:
        raise ConfigError(f"need 0 < dt <= T, got dt={cfg.dt}, T={cfg.T}")
    if cfg.paths < 1 or cfg.renorm_every < 1:
        raise ConfigError("paths and renorm_every must be positive")
    if cfg.scheme not in ("euler_maruyama", "milstein"):
        raise ConfigError(f"unknown scheme {cfg.scheme!r}")
    if cfg.thinning < cfg.dt:
        raise ConfigError("measure thinning must be at least dt")


def _out_dir(config: dict) -> str:
    out = config.get("output", {}).get("out_dir", "out")
    os.makedirs(out, exist_ok=True)
    return out


def _maybe_measure_sampler(field, config, cfg: lab.SimConfig):
    if "measure" not in config or not field.structure.autonomous:
        return None
    meas = config["measure"]
    x_init = meas.get("x_init")
    return measure.sample_invariant_measure(
        field, cfg.burn_in, cfg.measure_n, cfg.thinning, cfg.dt,
        seed=cfg.seed, x_init=x_init,
    )


def _dump_paths(field, cfg: lab.SimConfig, out_dir: str) -> None:
    steps = int(round(cfg.T / cfg.dt))
    record_every = max(1, steps // 1000)
    path = sde.sample_brownian(cfg.seed, 0, cfg.T, cfg.dt, field.channels)
    frames = sde.integrate_tangent(
        field, np.zeros(field.d), path, scheme=cfg.scheme, record_every=record_every
    )
    d = field.d
    header = (
        ["t"]
        + [f"x_{i + 1}" for i in range(d)]
        + [f"dphi_{i + 1}{j + 1}" for i in range(d) for j in range(d)]
    )
    lines = [",".join(header)]
    for t, x, v in zip(frames.times, frames.trajectory, frames.jacobian):
        cells = [repr(float(t))]
        cells += [repr(float(c)) for c in x]
        cells += [repr(float(c)) for c in v.reshape(-1)]
        lines.append(",".join(cells))
    with open(os.path.join(out_dir, "paths.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommand bodies


def _cmd_spectrum(config, chash, args) -> int:
    field = _build_field(config)
    cfg = _sim_config(config)
    out_dir = _out_dir(config)
    sampler = _maybe_measure_sampler(field, config, cfg)
    est = lyapunov.estimate_spectrum_qr(
        field, cfg.T, cfg.dt, renorm_every=cfg.renorm_every, paths=cfg.paths,
        seed=cfg.seed, scheme=cfg.scheme, x0_sampler=sampler,
    )
    payload = est.to_json_dict()
    payload["config_hash"] = chash
    _write_json(os.path.join(out_dir, "estimate.json"), payload)
    if config.get("output", {}).get("dump_paths"):
        _dump_paths(field, cfg, out_dir)
    if args.strict and not est.converged:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _cmd_estimate(config, chash, args) -> int:
    field = _build_field(config)
    cfg = _sim_config(config)
    out_dir = _out_dir(config)
    exp = config.get("experiment", {})
    method = exp.get("method", "qr")
    l = int(exp.get("l", 1))
    if method == "qr":
        sampler = _maybe_measure_sampler(field, config, cfg)
        est = lyapunov.estimate_spectrum_qr(
            field, cfg.T, cfg.dt, renorm_every=cfg.renorm_every, paths=cfg.paths,
            seed=cfg.seed, scheme=cfg.scheme, x0_sampler=sampler,
        )
        payload = est.to_json_dict()
        converged = est.converged
    elif method == "wedge":
        est = lyapunov.estimate_wedge_sum(
            field, l, cfg.T, cfg.dt, renorm_every=cfg.renorm_every,
            paths=cfg.paths, seed=cfg.seed, scheme=cfg.scheme,
        )
        payload = est.to_json_dict()
        converged = est.converged
    elif method == "furstenberg":
        sampler = _maybe_measure_sampler(field, config, cfg)
        if sampler is None:
            raise ConfigError("furstenberg estimation needs a 'measure' section")
        samples = int(exp.get("samples", 4096))
        est = lyapunov.furstenberg_estimate(
            field, sampler, l, samples, cfg.dt, seed=cfg.seed, scheme=cfg.scheme
        )
        payload = est.to_json_dict()
        converged = est.converged
    else:
        raise ConfigError(f"unknown estimate method {method!r}")
    payload["config_hash"] = chash
    _write_json(os.path.join(out_dir, "estimate.json"), payload)
    if config.get("output", {}).get("dump_paths"):
        _dump_paths(field, cfg, out_dir)
    if args.strict and not converged:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _cmd_measure(config, chash, args) -> int:
    field = _build_field(config)
    cfg = _sim_config(config)
    out_dir = _out_dir(config)
    meas = config.get("measure", {})
    mu = measure.sample_invariant_measure(
        field, cfg.burn_in, cfg.measure_n, cfg.thinning, cfg.dt,
        seed=cfg.seed, x_init=meas.get("x_init"),
    )
    header = [f"x_{i + 1}" for i in range(mu.d)]
    lines = [",".join(header)]
    for row in mu.points:
        lines.append(",".join(repr(float(c)) for c in row))
    with open(os.path.join(out_dir, "measure.csv"), "w") as fh:
        fh.write("\n".join(lines) + "\n")
    sidecar = dict(mu.provenance)
    sidecar["n"] = mu.n
    sidecar["config_hash"] = chash
    _write_json(os.path.join(out_dir, "measure.json"), sidecar)
    if args.strict and not mu.provenance.get("stationary", True):
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _cmd_continuity(config, chash, args) -> int:
    fam = _build_family(config)
    cfg = _sim_config(config)
    out_dir = _out_dir(config)
    exp = config.get("experiment", {})
    k_list = exp.get("k_list")
    if not k_list:
        raise ConfigError("experiment.k_list is required")
    report = lab.run_continuity_experiment(fam, k_list, cfg)
    report.config_hash = chash
    lab.emit_report(report, out_dir)
    if args.strict and report.verdict != "consistent":
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _cmd_lipschitz(config, chash, args) -> int:
    fam = _build_family(config)
    cfg = _sim_config(config)
    out_dir = _out_dir(config)
    exp = config.get("experiment", {})
    k_list = exp.get("k_list")
    if not k_list:
        raise ConfigError("experiment.k_list is required")
    p = float(exp.get("p", 3.0))
    mode = exp.get("mode", "lipschitz")
    report = lab.run_lipschitz_experiment(fam, p, k_list, cfg, mode=mode)
    report.config_hash = chash
    lab.emit_report(report, out_dir)
    if args.strict and report.verdict != "consistent":
        return EXIT_INCONCLUSIVE
    return EXIT_OK


def _cmd_verify(config, chash, args) -> int:
    field = _build_field(config)
    cfg = _sim_config(config)
    out_dir = _out_dir(config)
    vconf = config.get("verify", {})
    t_list = vconf.get("t_list", [0.5, 1.0, 2.0])
    result: dict = {"config_hash": chash}
    all_pass = True

    mono = check_monotonicity(
        field,
        pair_count=int(vconf.get("pair_count", 4096)),
        box_radius=float(vconf.get("box_radius", 5.0)),
        seed=cfg.seed,
    )
    mono_ok = mono.holds_with_lambda is not None
    result["monotonicity"] = {
        "holds_with_lambda": mono.holds_with_lambda,
        "worst_value": mono.worst_value,
        "pass": mono_ok,
    }
    all_pass &= mono_ok

    if mono_ok:
        rows = measure.check_contraction(
            field, t_list, mono.holds_with_lambda,
            pair_count=int(vconf.get("contraction_pairs", 128)),
            paths=int(vconf.get("contraction_paths", 8)),
            seed=cfg.seed, dt=cfg.dt, scheme=cfg.scheme,
        )
        result["contraction"] = {
            "lambda": mono.holds_with_lambda,
            "rows": [
                {
                    "t": r.t,
                    "ratio": r.ratio,
                    "upper_confidence": r.upper_confidence,
                    "bound": r.bound,
                    "pass": r.passed,
                }
                for r in rows
            ],
        }
        all_pass &= all(r.passed for r in rows)
    else:
        result["contraction"] = {"skipped": "no monotonicity certificate"}

    sub = vconf.get("subadditivity", {})
    l_values = sub.get("l", sorted({1, min(2, field.d), field.d}))
    max_violation = max(
        check_subadditivity(
            field, l, int(sub.get("m", 5)), int(sub.get("n", 5)),
            trials=int(sub.get("trials", 100)), seed=cfg.seed,
            dt=float(sub.get("dt", cfg.dt)), scheme=cfg.scheme,
        )
        for l in l_values
    )
    sub_ok = max_violation <= 1e-10
    result["subadditivity"] = {
        "l_values": list(l_values),
        "max_violation": max_violation,
        "pass": sub_ok,
    }
    all_pass &= sub_ok

    if field.structure.linear_in_x and field.metadata.jacobian_bound is not None and field.channels <= 1:
        rows = check_moment_bound(
            field, t_list, paths=int(vconf.get("moment_paths", 256)),
            seed=cfg.seed, dt=cfg.dt, scheme=cfg.scheme,
        )
        result["moment_bound"] = {
            "rows": [
                {
                    "t": r.t,
                    "empirical": r.empirical,
                    "upper_confidence": r.upper_confidence,
                    "bound": r.bound,
                    "pass": r.passed,
                }
                for r in rows
            ],
        }
        all_pass &= all(r.passed for r in rows)
    else:
        result["moment_bound"] = {
            "skipped": "requires a linear single-channel field with declared bound"
        }

    result["all_pass"] = bool(all_pass)
    _write_json(os.path.join(out_dir, "verify.json"), result)
    if args.strict and not all_pass:
        return EXIT_INCONCLUSIVE
    return EXIT_OK


_COMMANDS = {
    "spectrum": _cmd_spectrum,
    "estimate": _cmd_estimate,
    "measure": _cmd_measure,
    "continuity": _cmd_continuity,
    "lipschitz": _cmd_lipschitz,
    "verify": _cmd_verify,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lyapflow",
        description="Lyapunov spectra of SDEs and coefficient-continuity experiments",
    )
    sub = parser.add_subparsers(dest="command")
    for name in _COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--paths", type=int, default=None, help="override path count")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--threads", type=int, default=None, help="cap parallelism")
        p.add_argument("--strict", action="store_true",
                       help="exit 4 on inconclusive verdicts")
        p.add_argument("--dump-paths", action="store_true", dest="dump_paths",
                       help="write a trajectory/Jacobian CSV")
    return parser


def run(argv) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_CONFIG
    try:
        config, chash = _load_config(args.config, args)
        return _COMMANDS[args.command](config, chash, args)
    except (ConfigError, PreconditionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except LyapflowError as exc:
        if type(exc).__name__ in _NUMERICAL_ERRORS:
            print(f"numerical failure: {exc}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
