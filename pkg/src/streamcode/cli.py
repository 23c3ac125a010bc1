"""Command-line front end: ``analyze``, ``bounds``, ``simulate`` and ``schedule dump``.

Exit codes: 0 success, 2 invalid configuration, 3 decoder search or table cap exceeded.
Errors are printed to stderr as a one-line JSON object.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import bounds as bnd
from .channel import CapacityError, ChannelError, capacity, parse_channel
from .codebook import CodebookError
from .codec import SearchCapError
from .schedule import (
    SCHEMES,
    ScheduleError,
    StreamParams,
    cl_defaults,
    decode_plan,
    dump,
    message_alphabet,
    message_group,
)
from .sim import SimError, compare_to_bounds, exact_outcomes, run_stream, scheme_bounds

EXIT_OK, EXIT_CONFIG, EXIT_CAP = 0, 2, 3
ORACLE_LIMIT = 2 ** 16
LN2 = math.log(2)


class ConfigError(ValueError):
    def __init__(self, field: str | None, message: str):
        super().__init__(message)
        self.field = field


@dataclass(frozen=True)
class ExperimentConfig:
    channel: str
    n: int
    m: int
    t: int
    trials: int
    horizon: int
    scheme: str = "md_infinite"
    a: int | None = None
    b: int | None = None
    delta: float | None = None
    gamma: float | None = None
    r: float | None = None
    rho_n: float | None = None
    l_rate: float | None = None
    d_max: int | None = None
    messages: int | None = None
    codebooks: int = 1
    steady_state: bool = False
    seed: int = 0
    format: str = "json"

    REQUIRED = ("channel", "n", "m", "t", "trials", "horizon")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        names = {f.name: f for f in dataclasses.fields(cls)}
        for key in d:
            if key not in names:
                raise ConfigError(key, f"unknown field {key!r}")
        for key in cls.REQUIRED:
            if d.get(key) is None:
                raise ConfigError(key, f"missing required field {key!r}")
        kwargs = {}
        for key, value in d.items():
            if value is None:
                continue
            kind = names[key].type
            try:
                if "int" in kind and "bool" not in kind and not isinstance(value, bool):
                    if isinstance(value, float) and not value.is_integer():
                        raise ValueError
                    value = int(value)
                elif "float" in kind:
                    value = float(value)
                elif kind == "bool":
                    if not isinstance(value, bool):
                        raise ValueError
                elif kind == "str":
                    value = str(value)
            except (TypeError, ValueError):
                raise ConfigError(key, f"field {key!r} has invalid value {value!r}") from None
            kwargs[key] = value
        return cls(**kwargs)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _stream_params(cfg: ExperimentConfig, channel) -> StreamParams:
    a, b = cfg.a, cfg.b
    if cfg.scheme == "cl_truncated" and (a is None or b is None):
        if cfg.delta is None or cfg.l_rate is None:
            raise ConfigError("a", "truncated memory needs a and b, or delta and l_rate")
        v = capacity(channel)[1].dispersion
        a, b = cl_defaults(cfg.n, cfg.delta, cfg.l_rate, v, cfg.t)
    params = StreamParams(n=cfg.n, m=cfg.m, t=cfg.t, scheme=cfg.scheme, a=a, b=b, gamma=cfg.gamma,
                          r=cfg.r, rho_n=cfg.rho_n, l_rate=cfg.l_rate)
    if params.scheme == "cl_truncated":
        decode_plan(params, message_group(params, 2)[0])
    return params


def validate(cfg: ExperimentConfig):
    """Check every precondition before any work starts; returns (channel, params)."""
    if cfg.scheme not in SCHEMES:
        raise ConfigError("scheme", f"scheme must be one of {', '.join(SCHEMES)}")
    if cfg.format not in ("json", "csv"):
        raise ConfigError("format", "format must be json or csv")
    for name in ("n", "trials", "horizon", "codebooks"):
        if getattr(cfg, name) < 1:
            raise ConfigError(name, f"{name} must be >= 1")
    if cfg.codebooks > cfg.trials:
        raise ConfigError("codebooks", "codebooks cannot exceed trials")
    if not 0 <= cfg.seed < 2 ** 64:
        raise ConfigError("seed", "seed must be a 64-bit unsigned integer")
    if cfg.horizon < cfg.t:
        raise ConfigError("horizon", "horizon must be at least T")
    if cfg.d_max is not None and cfg.d_max < cfg.t:
        raise ConfigError("d_max", "d_max must be at least T")
    try:
        channel = parse_channel(cfg.channel)
    except (ChannelError, ValueError) as exc:
        raise ConfigError("channel", str(exc)) from None
    try:
        params = _stream_params(cfg, channel)
    except ScheduleError as exc:
        raise ConfigError(exc.field, str(exc)) from None
    return channel, params


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not serializable: {type(o).__name__}")


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


# -- subcommands --------------------------------------------------------------

def cmd_analyze(args) -> int:
    try:
        ch = parse_channel(args.channel)
    except ChannelError as exc:
        raise ConfigError("channel", str(exc)) from None
    p_star, info = capacity(ch, tol=args.tol)
    report = {
        "channel": ch.to_dict(),
        "capacity_nats": info.capacity,
        "capacity_bits": info.capacity / LN2,
        "dispersion_nats2": info.dispersion,
        "dispersion_bits2": info.dispersion / LN2 ** 2,
        "p_star": p_star.p.tolist(),
        "bracket_nats": info.bracket,
        "iterations": info.iterations,
    }
    if args.format == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        keys = [k for k in report if k not in ("channel", "p_star")]
        w.writerow(keys)
        w.writerow([report[k] for k in keys])
        _emit(buf.getvalue(), args.out)
    else:
        _emit(_dumps(report), args.out)
    return EXIT_OK


def parse_grid(text: str, kind=float) -> list:
    """``a:step:b`` inclusive ranges or comma lists."""
    text = text.strip()
    if text.count(":") == 2:
        lo, step, hi = (float(x) for x in text.split(":"))
        if step <= 0:
            raise ValueError("grid step must be positive")
        count = int(math.floor((hi - lo) / step + 1e-9)) + 1
        return [kind(round(lo + i * step, 12)) for i in range(count)]
    if text.count(":") == 1:
        lo, hi = (int(x) for x in text.split(":"))
        return [kind(x) for x in range(lo, hi + 1)]
    return [kind(x) for x in text.split(",") if x.strip()]


def bounds_rows(mus: list[float], ts: list[int]) -> list[dict]:
    rows = []
    for t in ts:
        for mu in mus:
            q = bnd.q_func(mu * math.sqrt(t))
            c = bnd.c_llt(mu, t)
            rows.append({"mu": mu, "T": t, "c": c, "qsum": bnd.q_sum(mu, t), "q": q, "target": c * q})
    return rows


def cmd_bounds(args) -> int:
    try:
        mus = parse_grid(args.mu, float)
        ts = parse_grid(args.t, int)
    except ValueError as exc:
        raise ConfigError("mu", f"bad grid: {exc}") from None
    if not mus or not ts or min(mus) <= 0 or min(ts) < 1:
        raise ConfigError("mu", "grids must be non-empty with mu > 0 and T >= 1")
    rows = bounds_rows(mus, ts)
    if args.format == "json":
        _emit(_dumps(rows), args.out)
        return EXIT_OK
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


OVERRIDES = ("channel", "n", "m", "t", "trials", "horizon", "scheme", "a", "b", "delta", "gamma", "r",
             "rho_n", "l_rate", "d_max", "messages", "codebooks", "seed", "format")


def load_config(args) -> ExperimentConfig:
    data = {}
    if args.config:
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("config", f"cannot read config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("config", "config must be a JSON object")
    for name in OVERRIDES:
        value = getattr(args, name, None)
        if value is not None:
            data[name] = value
    if args.steady_state:
        data["steady_state"] = True
    return ExperimentConfig.from_dict(data)


def simulate(cfg: ExperimentConfig, threads: int = 1) -> dict:
    channel, params = validate(cfg)
    p = capacity(channel)[0]
    stats = run_stream(params, channel, p, cfg.seed, cfg.horizon, cfg.trials, codebooks=cfg.codebooks,
                       messages=cfg.messages, d_max=cfg.d_max, threads=threads, steady_state=cfg.steady_state)
    result = {"config": cfg.to_dict(), **stats.to_dict()}
    params = stats.params
    targets = scheme_bounds(params, channel, p)
    result["input_distribution"] = p.p.tolist()
    result["bounds"] = [{"name": k, "value": v} for k, v in targets.items()]
    field = "undetected_error" if params.scheme in ("erasure", "vardelay") else "total_error"
    key = {"vardelay": "vardelay_error"}.get(params.scheme, field)
    if key in targets:
        result["comparison"] = compare_to_bounds(stats, targets[key], field=field)
    states = channel.outputs ** (params.n * cfg.horizon)
    tuples = math.prod(message_alphabet(params, j) for j in range(1, cfg.horizon + 1))
    if cfg.codebooks == 1 and states * tuples <= ORACLE_LIMIT:
        exact = exact_outcomes(params, channel, p, cfg.seed, cfg.horizon, messages=cfg.messages,
                               d_max=stats.d_max)
        result["oracle"] = [
            {"k": k, "exact_total_error": e["total_error"],
             "empirical_total_error": stats.per_k[k].rate("total_error")}
            for k, e in sorted(exact.items())
        ]
    return result


def result_csv(result: dict) -> str:
    buf = io.StringIO()
    cols = ["k", "trials", "correct", "total_error", "undetected_error", "erasure", "defaulted", "mean_delay"]
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for row in result["per_k"]:
        w.writerow([row[c] for c in cols])
    return buf.getvalue()


def cmd_simulate(args) -> int:
    cfg = load_config(args)
    result = simulate(cfg, threads=args.threads)
    text = result_csv(result) if cfg.format == "csv" else _dumps(result)
    _emit(text, args.out or None)
    return EXIT_OK


def cmd_schedule(args) -> int:
    if args.action != "dump":
        raise ConfigError("action", "only 'dump' is supported")
    try:
        params = StreamParams(n=args.n, m=args.m, t=args.t, scheme=args.scheme, a=args.a, b=args.b,
                              gamma=args.gamma, r=args.r)
        if args.first < 1 or args.last < args.first:
            raise ConfigError("first", "need 1 <= first <= last")
        text = _dumps(dump(params, args.first, args.last))
    except ScheduleError as exc:
        raise ConfigError(exc.field, str(exc)) from None
    _emit(text, args.out)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file (default: stdout)")
    common.add_argument("--format", choices=("json", "csv"))

    parser = argparse.ArgumentParser(prog="streamcode", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    an = sub.add_parser("analyze", parents=[common], help="capacity and dispersion of a channel")
    an.add_argument("channel", help="bsc:p, bec:e, identity:k or a JSON matrix file")
    an.add_argument("--tol", type=float, default=1e-10)
    an.set_defaults(func=cmd_analyze)

    bd = sub.add_parser("bounds", parents=[common], help="tabulate c, Q-sums and Q targets")
    bd.add_argument("--mu", default="0.5:0.25:5", help="grid lo:step:hi or comma list")
    bd.add_argument("--t", default="1:5", help="delay grid lo:hi or comma list")
    bd.set_defaults(func=cmd_bounds)

    sm = sub.add_parser("simulate", parents=[common], help="Monte Carlo run from a JSON config")
    sm.add_argument("--config")
    sm.add_argument("--channel")
    sm.add_argument("--scheme", choices=SCHEMES)
    for name in ("n", "m", "t", "trials", "horizon", "a", "b", "d-max", "messages", "codebooks"):
        sm.add_argument(f"--{name}", dest=name.replace("-", "_"), type=int)
    for name in ("delta", "gamma", "r", "rho-n", "l-rate"):
        sm.add_argument(f"--{name}", dest=name.replace("-", "_"), type=float)
    sm.add_argument("--seed", type=int)
    sm.add_argument("--threads", type=int, default=1)
    sm.add_argument("--steady-state", action="store_true")
    sm.set_defaults(func=cmd_simulate)

    sc = sub.add_parser("schedule", parents=[common], help="encode spans and decode plans")
    sc.add_argument("action", choices=("dump",))
    sc.add_argument("--scheme", choices=SCHEMES, default="md_infinite")
    sc.add_argument("--n", type=int, default=1)
    sc.add_argument("--m", type=int, default=2)
    sc.add_argument("--t", type=int, default=1)
    sc.add_argument("--a", type=int)
    sc.add_argument("--b", type=int)
    sc.add_argument("--gamma", type=float)
    sc.add_argument("--r", type=float)
    sc.add_argument("--first", type=int, default=1)
    sc.add_argument("--last", type=int, default=10)
    sc.set_defaults(func=cmd_schedule)
    return parser


def _fail(code: int, kind: str, message: str, field: str | None = None) -> int:
    err = {"error": kind, "message": message}
    if field:
        err["field"] = field
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "format", None) is None and args.command != "simulate":
        args.format = "csv" if args.command == "bounds" else "json"
    try:
        return args.func(args)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), exc.field)
    except (ScheduleError, SimError, ChannelError) as exc:
        return _fail(EXIT_CONFIG, "config", str(exc), getattr(exc, "field", None))
    except (SearchCapError, CodebookError) as exc:
        return _fail(EXIT_CAP, "cap_exceeded", str(exc))
    except CapacityError as exc:
        return _fail(EXIT_CONFIG, "convergence", str(exc))


if __name__ == "__main__":
    raise SystemExit(main())
