"""Monte Carlo harness, exact enumeration oracle and bound comparison.

Randomness comes from three disjoint PRF domains of one master seed: the
codebook (per ensemble member), the channel noise and the message draws. Noise
and messages are keyed by the global trial index, so two runs that share a
seed see the same uniforms trial by trial (paired comparisons), and results
do not depend on how work is split across threads.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Mapping

import numpy as np
from scipy.stats import norm
from statsmodels.stats.proportion import proportion_confint

from . import bounds as bnd
from .channel import Dmc, InputDist, capacity, measures
from .codebook import (
    DOMAIN_MESSAGES,
    DOMAIN_NOISE,
    PRF_VERSION,
    cdf_table,
    domain_key,
    ensemble_seed,
    uniforms,
)
from .codec import CORRECT, DEFAULTED, ERASED, UNDETECTED, StreamCode, _Batch, deadline_block
from .schedule import StreamParams, deadline, message_alphabet

CHUNK = 2048
EXACT_STATE_CAP = 2 ** 24
EXACT_ROWS = 2 ** 14


class SimError(ValueError):
    """Simulation request that cannot be carried out as specified."""


@dataclass
class KStats:
    """Outcome counts for one message index."""

    trials: int = 0
    correct: int = 0
    undetected_error: int = 0
    erasure: int = 0
    defaulted: int = 0
    delay_hist: dict[int, int] = field(default_factory=dict)

    @property
    def total_error(self) -> int:
        return self.undetected_error + self.erasure

    def merge(self, other: "KStats") -> None:
        self.trials += other.trials
        self.correct += other.correct
        self.undetected_error += other.undetected_error
        self.erasure += other.erasure
        self.defaulted += other.defaulted
        for d, c in other.delay_hist.items():
            self.delay_hist[d] = self.delay_hist.get(d, 0) + c
        self.delay_hist = dict(sorted(self.delay_hist.items()))

    def rate(self, name: str) -> float:
        return getattr(self, name) / self.trials if self.trials else 0.0

    @property
    def mean_delay(self) -> float:
        return sum(d * c for d, c in self.delay_hist.items()) / self.trials if self.trials else 0.0

    def to_dict(self) -> dict:
        return {
            "trials": self.trials,
            "correct": self.correct,
            "total_error": self.total_error,
            "undetected_error": self.undetected_error,
            "erasure": self.erasure,
            "defaulted": self.defaulted,
            "delay_hist": {str(d): c for d, c in self.delay_hist.items()},
            "mean_delay": self.mean_delay,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "KStats":
        return cls(d["trials"], d["correct"], d["undetected_error"], d["erasure"], d["defaulted"],
                   {int(k): v for k, v in d["delay_hist"].items()})


@dataclass
class TrialStats:
    params: StreamParams
    seed: int
    codebooks: int
    horizon: int
    trials: int
    per_k: dict[int, KStats]
    d_max: int | None = None
    steady_state: bool = False
    prf_version: str = PRF_VERSION

    def aggregate_ks(self) -> list[int]:
        ks = sorted(self.per_k)
        if self.steady_state:
            t = self.params.t
            trimmed = [k for k in ks if t < k <= self.horizon - 2 * t + 1]
            return trimmed or ks
        return ks

    def aggregate(self) -> dict:
        """Rates averaged over message indices, the finite-horizon error criterion."""
        ks = self.aggregate_ks()
        out = {"messages": ks}
        for name in ("total_error", "undetected_error", "erasure", "defaulted"):
            out[name] = math.fsum(self.per_k[k].rate(name) for k in ks) / len(ks)
        out["mean_delay"] = math.fsum(self.per_k[k].mean_delay for k in ks) / len(ks)
        return out

    def merge(self, part: dict[int, KStats]) -> None:
        for k, s in part.items():
            self.per_k.setdefault(k, KStats()).merge(s)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "seeds": {"master": self.seed, "codebooks": self.codebooks},
            "horizon": self.horizon,
            "trials": self.trials,
            "d_max": self.d_max,
            "steady_state": self.steady_state,
            "per_k": [dict(k=k, **self.per_k[k].to_dict()) for k in sorted(self.per_k)],
            "aggregate": self.aggregate(),
            "prf_version": self.prf_version,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrialStats":
        per_k = {row["k"]: KStats.from_dict(row) for row in d["per_k"]}
        return cls(StreamParams.from_dict(d["params"]), d["seeds"]["master"], d["seeds"]["codebooks"],
                   d["horizon"], d["trials"], per_k, d.get("d_max"), d.get("steady_state", False),
                   d["prf_version"])

    def to_csv(self) -> str:
        buf = io.StringIO()
        cols = ["k", "trials", "correct", "total_error", "undetected_error", "erasure", "defaulted", "mean_delay"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for k in sorted(self.per_k):
            row = self.per_k[k].to_dict()
            w.writerow([k] + [row[c] for c in cols[1:]])
        return buf.getvalue()


# -- randomness ---------------------------------------------------------------

def _trial_words(trials: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = trials.astype(np.uint64)
    return (t & np.uint64(0xFFFFFFFF)).astype(np.uint32), (t >> np.uint64(32)).astype(np.uint32)


def draw_messages(params: StreamParams, seed: int, trials: np.ndarray, count: int) -> np.ndarray:
    """Uniform messages G_1..G_count for each trial index, 0-based."""
    lo, hi = _trial_words(trials)
    key = domain_key(seed, DOMAIN_MESSAGES)
    out = np.empty((trials.size, count), dtype=np.int64)
    for k in range(1, count + 1):
        ctr = np.zeros((trials.size, 4), dtype=np.uint32)
        ctr[:, 0] = k
        ctr[:, 2], ctr[:, 3] = lo, hi
        size = message_alphabet(params, k)
        u = uniforms(ctr, key)
        out[:, k - 1] = np.minimum(np.ceil(u * size).astype(np.int64) - 1, size - 1)
    return out


def channel_outputs(channel: Dmc, seed: int, trials: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Pass codewords x (trials, blocks, n) through W, one uniform per (trial, block, position)."""
    ntr, blocks, n = x.shape
    lo, hi = _trial_words(trials)
    ctr = np.zeros((ntr, blocks, n, 4), dtype=np.uint32)
    ctr[..., 0] = np.arange(n, dtype=np.uint32)
    ctr[..., 1] = np.arange(1, blocks + 1, dtype=np.uint32)[:, None]
    ctr[..., 2] = lo[:, None, None]
    ctr[..., 3] = hi[:, None, None]
    u = uniforms(ctr.reshape(-1, 4), domain_key(seed, DOMAIN_NOISE)).reshape(ntr, blocks, n)
    cdf = cdf_table(channel.w)[x]
    return np.sum(u[..., None] > cdf, axis=-1)


# -- Monte Carlo -------------------------------------------------------------

def evaluated_messages(params: StreamParams, horizon: int, messages: int | None = None) -> list[int]:
    """Message indices whose fixed-delay deadline falls inside the horizon."""
    ks = [k for k in range(1, horizon + 1) if deadline(params, k) <= horizon]
    if messages is not None:
        ks = [k for k in ks if k <= messages]
    return ks


def prepare_params(params: StreamParams, channel: Dmc) -> StreamParams:
    """Fill in the rate gap rho_n = C - ln(M)/n when the scheme needs it and none was given."""
    if params.rho_n is None and params.scheme in ("erasure", "vardelay"):
        c = capacity(channel)[1].capacity
        return replace(params, rho_n=c - math.log(params.m) / params.n)
    return params


def _tally(ks_out: dict[int, KStats], k: int, kinds: np.ndarray, delays: np.ndarray) -> None:
    s = KStats(trials=kinds.size)
    s.correct = int(np.sum(kinds == CORRECT))
    s.erasure = int(np.sum(kinds == ERASED))
    s.defaulted = int(np.sum(kinds == DEFAULTED))
    s.undetected_error = int(np.sum(kinds == UNDETECTED)) + s.defaulted
    vals, counts = np.unique(delays, return_counts=True)
    s.delay_hist = {int(v): int(c) for v, c in zip(vals, counts)}
    ks_out[k] = s


def blocks_needed(params: StreamParams, horizon: int, ks: list[int], d_max: int | None) -> int:
    """Last output block any evaluated decoder reads."""
    if params.scheme == "vardelay":
        return max(min(k + d_max - 1, horizon) for k in ks)
    return max(deadline_block(params, k) for k in ks)


def _work(code: StreamCode, channel: Dmc, seed: int, start: int, stop: int, horizon: int,
          ks: list[int], d_max: int | None) -> dict[int, KStats]:
    params = code.params
    trials = np.arange(start, stop)
    blocks = blocks_needed(params, horizon, ks, d_max)
    g = draw_messages(params, seed, trials, blocks)
    ys = channel_outputs(channel, seed, trials, code.transmit(g, blocks))
    batch = _Batch(code, ys)
    out: dict[int, KStats] = {}
    for k in ks:
        if params.scheme == "vardelay":
            res = code.vardelay_batch(k, ys, min(d_max, horizon - k + 1), batch)
        else:
            res = code.decode_batch(k, ys, batch)
        _tally(out, k, res.kinds(g[:, k - 1]), res.delay)
    return out


def run_stream(params: StreamParams, channel: Dmc, p: InputDist, seed: int, horizon: int, trials: int,
               *, codebooks: int = 1, messages: int | None = None, d_max: int | None = None,
               threads: int = 1, steady_state: bool = False) -> TrialStats:
    """Simulate ``trials`` independent transmissions of ``horizon`` blocks and tally per-message outcomes.

    Trials are split into ``codebooks`` contiguous groups, one codebook
    realization each. With ``messages`` set, only G_1..G_messages are decoded.
    """
    if horizon < params.t:
        raise SimError(f"horizon {horizon} is shorter than the delay T={params.t}")
    if trials < 1 or codebooks < 1 or codebooks > trials:
        raise SimError("need trials >= codebooks >= 1")
    if params.scheme == "vardelay":
        d_max = d_max if d_max is not None else 8 * params.t
        if d_max < params.t:
            raise SimError("d_max must be at least T")
    params = prepare_params(params, channel)
    ks = evaluated_messages(params, horizon, messages)
    if not ks:
        raise SimError("no message has its deadline inside the horizon")
    codes = [StreamCode(params, channel, p, ensemble_seed(seed, i)) for i in range(codebooks)]
    items = []
    for i in range(codebooks):
        lo, hi = i * trials // codebooks, (i + 1) * trials // codebooks
        items += [(i, s, min(s + CHUNK, hi)) for s in range(lo, hi, CHUNK)]

    def run(item):
        i, s, e = item
        return _work(codes[i], channel, seed, s, e, horizon, ks, d_max)

    stats = TrialStats(params, seed, codebooks, horizon, trials, {}, d_max, steady_state)
    if threads <= 1:
        parts = map(run, items)
    else:
        pool = ThreadPoolExecutor(max_workers=threads)
        parts = pool.map(run, items)
    for part in parts:
        stats.merge(part)
    if threads > 1:
        pool.shutdown()
    return stats


# -- exact oracle ------------------------------------------------------------

def exact_outcomes(params: StreamParams, channel: Dmc, p: InputDist, seed: int, horizon: int,
                   *, messages: int | None = None, d_max: int | None = None) -> dict[int, dict]:
    """Exact outcome probabilities for one codebook, by enumerating all messages and outputs."""
    params = prepare_params(params, channel)
    states = channel.outputs ** (params.n * horizon)
    if states > EXACT_STATE_CAP:
        raise SimError(f"{states} output sequences exceed the oracle cap of {EXACT_STATE_CAP}")
    if params.scheme == "vardelay" and d_max is None:
        d_max = 8 * params.t
    ks = evaluated_messages(params, horizon, messages)
    code = StreamCode(params, channel, p, seed)
    sizes = [message_alphabet(params, j) for j in range(1, horizon + 1)]
    n_msgs = math.prod(sizes)
    symbols = params.n * horizon
    acc = {k: Counter() for k in ks}
    for g in itertools.product(*(range(s) for s in sizes)):
        g = np.array([g])
        x = code.transmit(g, horizon).reshape(-1)
        for start in range(0, states, EXACT_ROWS):
            idx = np.arange(start, min(start + EXACT_ROWS, states))
            ys = np.stack([(idx // channel.outputs ** (symbols - 1 - c)) % channel.outputs
                           for c in range(symbols)], axis=1)
            weight = np.prod(channel.w[x[None, :], ys], axis=1)
            keep = weight > 0
            ys, weight = ys[keep].reshape(-1, horizon, params.n), weight[keep] / n_msgs
            if weight.size == 0:
                continue
            batch = _Batch(code, ys)
            truth = np.repeat(g, weight.size, axis=0)
            for k in ks:
                if params.scheme == "vardelay":
                    res = code.vardelay_batch(k, ys, min(d_max, horizon - k + 1), batch)
                else:
                    res = code.decode_batch(k, ys, batch)
                kinds = res.kinds(truth[:, k - 1])
                for kind, name in ((UNDETECTED, "undetected_error"), (DEFAULTED, "defaulted"),
                                   (ERASED, "erasure")):
                    acc[k][name] += math.fsum(weight[kinds == kind].tolist())
                acc[k]["delay"] += math.fsum((weight * res.delay).tolist())
    out = {}
    for k in ks:
        a = acc[k]
        undetected = a["undetected_error"] + a["defaulted"]
        out[k] = {
            "total_error": undetected + a["erasure"],
            "undetected_error": undetected,
            "erasure": a["erasure"],
            "defaulted": a["defaulted"],
            "mean_delay": a["delay"],
        }
    return out


def exact_error(params: StreamParams, channel: Dmc, p: InputDist, seed: int, k: int, horizon: int,
                **kwargs) -> float:
    """Exact P(estimate of G_k != G_k | codebook) for a tiny instance."""
    res = exact_outcomes(params, channel, p, seed, horizon, **kwargs)
    if k not in res:
        raise SimError(f"message {k} has no deadline inside horizon {horizon}")
    return res[k]["total_error"]


# -- bounds ------------------------------------------------------------------

def wilson(successes: int, trials: int, z: float = 1.96) -> tuple[float, float]:
    alpha = 2 * norm.sf(z)
    lo, hi = proportion_confint(successes, trials, alpha=alpha, method="wilson")
    return float(lo), float(hi)


def scheme_bounds(params: StreamParams, channel: Dmc, p: InputDist, *, lam: float = 0.9) -> dict:
    """Ensemble bounds matching the scheme, evaluated at the code's (n, rho_n, T).

    The moderate-deviations constant tau is K/(6 V^3) from the channel's
    centered information-density law; these are the finite-n expressions
    whose derivation assumes n is large enough for that expansion to hold.
    """
    p_star, info = capacity(channel)
    m = measures(channel, p)
    v, c = m.v_var, info.capacity
    n, t = params.n, params.t
    rho = params.rho_n if params.rho_n is not None else c - math.log(params.m) / n
    out = {"capacity": c, "dispersion": float(v), "rho_n": rho}
    if v <= 0 or rho <= 0:
        return out
    model = bnd.cgf_from_channel(channel, p)
    tau = model.k / (6 * v ** 3)
    bp = bnd.BoundParams(tau=tau, lam=lam, gamma=params.gamma or 0.5)
    s = params.scheme
    if s == "md_infinite":
        out["total_error"] = bnd.finite_md_rhs(v, t, n, rho, bp)
    elif s in ("erasure", "vardelay"):
        out["total_error"] = bnd.erasure_total_bound(v, t, n, rho, params.gamma, tau)
        out["undetected_error"] = bnd.erasure_undetected_bound(t, n, rho, params.gamma)
        if s == "vardelay":
            out["vardelay_error"] = bnd.vardelay_error_bound(t, n, rho, params.gamma)
            out["excess_delay"] = bnd.vardelay_excess_delay_bound(v, t, n, rho, params.gamma, tau)
    elif s == "alternating":
        tp = bnd.alt_tau_prime(model, c, t, params.r) if t % 2 == 1 else 0.0
        bp = replace(bp, tau_prime=tp)
        out["odd"] = bnd.alternating_bound(v, t, n, rho, params.r, "odd", bp)
        out["even"] = bnd.alternating_bound(v, t, n, rho, params.r, "even", bp)
    elif s == "cl_truncated" and params.l_rate:
        tau1 = bnd.berry_esseen_constant(model)
        ratio = model.third_abs_moment() / v ** 1.5
        tau2 = 2 * (math.log(2) / math.sqrt(2 * math.pi) + 12 * ratio) / math.sqrt(v)
        out["total_error"] = bnd.cl_error_bound(v, params.l_rate, t, params.a, params.b, n, tau1, tau2)
    for key in ("total_error", "undetected_error", "vardelay_error", "odd", "even"):
        if key in out:
            out[key] = min(1.0, out[key])
    return out


def compare_to_bounds(stats: TrialStats, targets: float | Mapping[int, float], *, field: str = "total_error",
                      z: float = 1.96) -> dict:
    """Per-k and pooled rows: empirical rate, Wilson interval, bound, and a violation flag.

    A bound counts as violated only when the interval's lower end exceeds it.
    """
    if field not in ("total_error", "undetected_error", "erasure", "defaulted"):
        raise SimError(f"unknown statistic {field!r}")
    if isinstance(targets, Mapping):
        missing = set(stats.per_k) - set(targets)
        if missing:
            raise SimError(f"no bound for messages {sorted(missing)}")
        bound_of = lambda k: float(targets[k])  # noqa: E731
    else:
        bound_of = lambda k: float(targets)  # noqa: E731
    rows = []
    for k in sorted(stats.per_k):
        s = stats.per_k[k]
        count = getattr(s, field)
        lo, hi = wilson(count, s.trials, z)
        b = bound_of(k)
        rows.append({"k": k, "rate": count / s.trials, "ci_low": lo, "ci_high": hi,
                     "bound": b, "bound_violated": lo > b})
    ks = stats.aggregate_ks()
    count = sum(getattr(stats.per_k[k], field) for k in ks)
    total = sum(stats.per_k[k].trials for k in ks)
    lo, hi = wilson(count, total, z)
    b = max(bound_of(k) for k in ks)
    agg = {"rate": count / total, "ci_low": lo, "ci_high": hi, "bound": b, "bound_violated": lo > b}
    return {"field": field, "z": z, "codebooks": stats.codebooks, "per_k": rows, "aggregate": agg}
