"""ticktomo command-line interface.

Subcommands::

    ticktomo simulate    --config exp.json --seed 7
    ticktomo reconstruct sample.csv --k-max 8 [--gamma-unknown]
    ticktomo spectrum    clock.json
    ticktomo fcs         --config walk.json --seed 3
    ticktomo bounds      report.json --theta 0.02 0.05 0.1

Exit codes: 0 success (possibly with warnings), 2 usage or configuration
error, 3 the clock may never tick.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from . import tomography as tomo
from .clock_models import (
    ClockValidationError,
    Erlang,
    Exponential,
    LindbladDerived,
    NonTerminatingSampleError,
    NotTickingError,
    certify_envelope,
)
from .combinatorics import CapacityError
from .simulator import (
    RateMatrixClock,
    TickSample,
    default_burn_in,
    sample_nonreset_table,
    sample_perfect_reference_counts,
    sample_reset_counts,
)
from .specs import load_clock_spec

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NOT_TICKING = 3

PROTOCOLS = ("reset", "perfect_reference", "nonreset")


class UsageError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    """All inputs of one run. Paths are resolved relative to the config file."""

    clock_spec: str | None = None
    protocol: str = "reset"
    gamma: float | None = None
    tau: float | None = None
    N: int | None = None
    M: int | None = None
    n_ref: int | None = None
    k_max: int = tomo.DEFAULT_K_MAX
    seed: int | None = None
    burn_in: float | None = None
    alpha_n: list | None = None
    j_max: int = 2
    output_csv: str | None = None
    output_json: str | None = None

    @classmethod
    def load(cls, path: str | None) -> "ExperimentConfig":
        if path is None:
            return cls()
        base = Path(path).resolve().parent
        try:
            data = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"cannot read config {path}: {exc}") from exc
        if not isinstance(data, dict):
            raise UsageError("config: must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise UsageError(f"config: unknown field(s) {unknown}")
        cfg = cls(**data)
        for key in ("clock_spec", "output_csv", "output_json"):
            value = getattr(cfg, key)
            if value is not None and not Path(value).is_absolute():
                setattr(cfg, key, str(base / value))
        return cfg

    def override(self, args: argparse.Namespace) -> "ExperimentConfig":
        for f in fields(self):
            value = getattr(args, f.name, None)
            if value is not None:
                setattr(self, f.name, value)
        return self

    def require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            flags = ", ".join("--" + n.replace("_", "-") for n in missing)
            raise UsageError(f"missing required setting(s): {flags}")


# --------------------------------------------------------------------------
# helpers
# --------------------------------------------------------------------------


def _emit(text: str, path: str | None) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _warn(msg: str) -> None:
    print(f"warning: {msg}", file=sys.stderr)


def _check_ticks(model) -> None:
    if isinstance(model, LindbladDerived) and not model.spectrum.ticks_eventually:
        raise NotTickingError("clock may never tick (zero mode outside the ticked state)")


def _as_rate_clock(model) -> RateMatrixClock:
    """Rate-matrix form of a clock for the non-reset pipeline."""
    if isinstance(model, RateMatrixClock):
        return model
    if isinstance(model, Exponential):
        return RateMatrixClock([[0.0]], forward=[[model.rate]])
    if isinstance(model, Erlang):
        k = int(model.shape)
        silent = np.zeros((k, k))
        fwd = np.zeros((k, k))
        for i in range(k - 1):
            silent[i, i + 1] = model.rate
        fwd[k - 1, 0] = model.rate
        return RateMatrixClock(silent, forward=fwd)
    raise UsageError(f"non-reset simulation requires a rate_matrix, exponential or erlang clock, got {model.kind}")


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = ExperimentConfig.load(args.config).override(args)
    cfg.require("clock_spec", "seed")
    if cfg.protocol not in PROTOCOLS:
        raise UsageError(f"protocol: must be one of {PROTOCOLS}")
    model = load_clock_spec(cfg.clock_spec)
    if cfg.protocol == "nonreset":
        cfg.require("gamma", "M", "n_ref")
        clock = _as_rate_clock(model)
        burn = default_burn_in(clock) if cfg.burn_in is None else cfg.burn_in
        table = sample_nonreset_table(clock, cfg.gamma, [cfg.n_ref], cfg.M, cfg.seed, burn_in=burn, workers=args.workers)
        sample = TickSample("nonreset", float(cfg.gamma), table[:, 0], cfg.seed, clock.digest(), n_ref=cfg.n_ref,
                            parameters={"burn_in": burn})
    else:
        if isinstance(model, RateMatrixClock):
            raise UsageError("clock_spec: rate_matrix clocks only support the nonreset protocol")
        _check_ticks(model)
        cfg.require("N")
        if cfg.protocol == "reset":
            cfg.require("gamma")
            sample = sample_reset_counts(model, cfg.gamma, cfg.N, cfg.seed, workers=args.workers)
        else:
            cfg.require("tau")
            sample = sample_perfect_reference_counts(model, cfg.tau, cfg.N, cfg.seed, workers=args.workers)
    csv_path = cfg.output_csv or "sample.csv"
    json_path = cfg.output_json or str(Path(csv_path).with_suffix(".json"))
    sample.save(csv_path, json_path)
    print(f"wrote {sample.sample_size} counts to {csv_path} and {json_path}", file=sys.stderr)
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    try:
        sample = TickSample.load(args.sample)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"cannot read sample {args.sample}: {exc}") from exc
    if sample.protocol == "nonreset":
        raise UsageError("reconstruct needs a reset or perfect_reference sample; use 'fcs' for nonreset data")
    report = tomo.moment_report(sample, args.k_max, gamma_unknown=args.gamma_unknown)
    for flag in report.flags:
        _warn(flag)
    _emit(report.to_json() + "\n", args.out)
    return EXIT_OK


def cmd_spectrum(args) -> int:
    model = load_clock_spec(args.clock)
    if not isinstance(model, LindbladDerived):
        raise UsageError("spectrum requires lindblad clock")
    report = model.spectrum
    out = {"spectrum": report.to_dict(), "envelope": None}
    if not report.ticks_eventually:
        _warn("clock may never tick: ticks_eventually=false, no envelope certificate")
    else:
        t_max = args.t_max if args.t_max is not None else 250.0 / report.delta
        grid = np.linspace(0.0, t_max, args.points)
        cert = certify_envelope(model.clock, model.initial_state, report.delta, grid, report=report)
        out["envelope"] = cert.to_dict()
        if not cert.holds:
            _warn("envelope certificate does not hold on this grid")
    _emit(json.dumps(out, sort_keys=True, indent=1) + "\n", args.out)
    return EXIT_OK


def cmd_fcs(args) -> int:
    cfg = ExperimentConfig.load(args.config).override(args)
    cfg.protocol = "nonreset"
    cfg.require("clock_spec", "seed", "gamma", "M", "n_ref")
    if cfg.M < 2:
        raise UsageError("M: need at least 2 repetitions to estimate the variance rate")
    clock = _as_rate_clock(load_clock_spec(cfg.clock_spec))
    burn = default_burn_in(clock) if cfg.burn_in is None else cfg.burn_in
    n_ref = int(cfg.n_ref)
    if cfg.alpha_n is None:
        alpha_n = sorted({max(1, n_ref * q // 4) for q in range(1, 5)})
    else:
        alpha_n = sorted({int(n) for n in cfg.alpha_n} | {n_ref})
    table = sample_nonreset_table(clock, cfg.gamma, alpha_n, cfg.M, cfg.seed, burn_in=burn, workers=args.workers)
    col = table[:, alpha_n.index(n_ref)]
    sample = TickSample("nonreset", float(cfg.gamma), col, cfg.seed, clock.digest(), n_ref=n_ref,
                        parameters={"burn_in": burn})
    report = tomo.fcs_estimate(sample)
    m_table = {n: [float(np.mean(table[:, i].astype(float) ** j)) for j in range(1, cfg.j_max + 1)]
               for i, n in enumerate(alpha_n)}
    try:
        fit = tomo.fit_alpha_coefficients(m_table, cfg.gamma, cfg.j_max)
        report.alpha = {str(j): [float(x) for x in a] for j, a in fit.alpha.items()}
        report.alpha_residuals = {str(j): r for j, r in fit.residuals.items()}
    except tomo.ConditioningError as exc:
        report.flags.append(f"alpha fit skipped: {exc}")
    for flag in report.flags:
        _warn(flag)
    out = report.to_dict()
    out["config"] = {k: v for k, v in asdict(cfg).items() if k not in ("output_csv", "output_json", "N", "tau", "k_max")}
    out["config"].update({"burn_in": burn, "alpha_n": alpha_n, "model_digest": clock.digest()})
    _emit(json.dumps(out, sort_keys=True, indent=1) + "\n", args.out or cfg.output_json)
    return EXIT_OK


BOUNDS_HEADER = ["k", "theta", "chebyshev_bound", "m_k", "sub_poisson_lower", "sub_poisson_upper", "status"]


def bounds_rows(report: dict, thetas) -> list[list]:
    """Rows of the bounds table for a serialised moment report."""
    M = [float(x) for x in report["clock_moments"]]
    rel = [float(x) for x in report["relative_moments"]]
    k_max = int(report["k_max"])
    N = int(report["sample_size"])
    reset = report["protocol"] == "reset"
    g = 1.0 if report["relative_mode"] else report.get("gamma")
    rows = []
    for k in range(1, k_max + 1):
        lo = up = ""
        if reset:
            lo, up = tomo.sub_poisson_relative_moment_bounds([1.0] + M[:k], g, k)
        for theta in thetas:
            if 2 * k > k_max:
                rows.append([k, theta, "", rel[k - 1], lo, up, "insufficient order"])
                continue
            if reset:
                b = tomo.chebyshev_fractional_bound(k, N, theta, M[: 2 * k], g)
            else:
                b = max(M[2 * k - 1] - M[k - 1] ** 2, 0.0) / (N * theta**2 * M[k - 1] ** 2)
            rows.append([k, theta, b, rel[k - 1], lo, up, "ok"])
    return rows


def cmd_bounds(args) -> int:
    thetas = args.theta
    if any(not t > 0 for t in thetas):
        raise UsageError("theta: every value must be positive")
    try:
        report = json.loads(Path(args.report).read_text())
        report["clock_moments"], report["k_max"], report["sample_size"], report["protocol"]
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"cannot read moment report {args.report}: {exc}") from exc
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(BOUNDS_HEADER)
    for row in bounds_rows(report, thetas):
        writer.writerow([repr(x) if isinstance(x, float) else x for x in row])
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


# --------------------------------------------------------------------------
# argument parsing
# --------------------------------------------------------------------------


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be a positive integer")
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ticktomo", description="Tick-record tomography of clocks.")
    sub = parser.add_subparsers(dest="command", required=True)

    def experiment_flags(p):
        p.add_argument("--config", help="experiment config JSON")
        p.add_argument("--clock", dest="clock_spec", help="clock spec JSON (overrides config)")
        p.add_argument("--seed", type=int, help="root seed (required here or in the config)")
        p.add_argument("--gamma", type=float, help="reference rate")
        p.add_argument("--M", type=int, help="non-reset repetitions")
        p.add_argument("--n-ref", dest="n_ref", type=_positive_int, help="reference ticks per repetition")
        p.add_argument("--burn-in", dest="burn_in", type=float, help="burn-in time (default 20 / smallest rate)")
        p.add_argument("--workers", type=_positive_int, default=1, help="threads (never changes output)")

    p = sub.add_parser("simulate", help="simulate a tick record")
    experiment_flags(p)
    p.add_argument("--protocol", choices=PROTOCOLS)
    p.add_argument("--tau", type=float, help="perfect reference period")
    p.add_argument("--N", type=int, help="number of target ticks")
    p.add_argument("--out-csv", dest="output_csv")
    p.add_argument("--out-json", dest="output_json")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="moment report from a reset sample")
    p.add_argument("sample", help="sample CSV or JSON")
    p.add_argument("--k-max", type=_positive_int, default=tomo.DEFAULT_K_MAX)
    p.add_argument("--gamma-unknown", action="store_true", help="report gamma^k M_k (dimensionless)")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("spectrum", help="spectral gap and envelope certificate of a lindblad clock")
    p.add_argument("clock", help="lindblad clock spec JSON")
    p.add_argument("--t-max", type=float, help="certificate grid end (default 250 / gap)")
    p.add_argument("--points", type=_positive_int, default=2001)
    p.add_argument("--out")
    p.set_defaults(func=cmd_spectrum)

    p = sub.add_parser("fcs", help="counting statistics of a non-reset clock")
    experiment_flags(p)
    p.add_argument("--alpha-n", dest="alpha_n", type=_positive_int, nargs="+", help="reference counts for the alpha fit")
    p.add_argument("--j-max", dest="j_max", type=_positive_int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_fcs)

    p = sub.add_parser("bounds", help="Chebyshev and sub-Poissonian bounds from a moment report")
    p.add_argument("report", help="moment report JSON")
    p.add_argument("--theta", type=float, nargs="+", default=[0.02, 0.05, 0.1])
    p.add_argument("--out")
    p.set_defaults(func=cmd_bounds)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (NotTickingError, NonTerminatingSampleError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NOT_TICKING
    except (UsageError, ClockValidationError, CapacityError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
