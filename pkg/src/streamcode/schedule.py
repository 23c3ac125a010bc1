"""Message-to-block mapping for the streaming schemes.

Blocks and messages are 1-indexed: message ``G_k`` arrives at the start of
block ``k`` and is due at the end of block ``T_k = k + T - 1``.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

SCHEMES = ("md_infinite", "cl_truncated", "erasure", "vardelay", "alternating")

SIMULTANEOUS = "simultaneous"
SEQUENTIAL = "sequential"


class ScheduleError(ValueError):
    """Parameters that admit no valid schedule; ``field`` names the offending parameter."""

    def __init__(self, message: str):
        super().__init__(message)
        head, sep, _ = message.partition(": ")
        self.field = head if sep and head.isidentifier() else None


@dataclass(frozen=True)
class StreamParams:
    n: int
    m: int
    t: int
    scheme: str = "md_infinite"
    m_log: float | None = None
    a: int | None = None
    b: int | None = None
    gamma: float | None = None
    r: float | None = None
    rho_n: float | None = None
    l_rate: float | None = None

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ScheduleError(f"scheme: unknown scheme {self.scheme!r}")
        if self.n < 0:
            raise ScheduleError("n: block length must be non-negative")
        if self.t < 1:
            raise ScheduleError("t: decoding delay must be >= 1")
        if self.m < 2:
            raise ScheduleError("m: message set needs at least 2 elements")
        if self.m_log is None:
            object.__setattr__(self, "m_log", math.log(self.m))
        elif abs(math.log(self.m) - self.m_log) > math.log1p(1 / self.m):
            raise ScheduleError("m_log: inconsistent with the integer message-set size")
        if self.scheme == "cl_truncated":
            if self.a is None or self.b is None:
                raise ScheduleError("a: truncated memory needs both a and b")
            if not self.a >= 2 * self.b - self.t - 2 >= 0:
                raise ScheduleError("a: need A >= 2B - T - 2 >= 0")
            if self.b < self.t:
                raise ScheduleError("b: minimum memory B must be at least T")
        if self.scheme in ("erasure", "vardelay"):
            if self.gamma is None or not 0 < self.gamma < 1:
                raise ScheduleError("gamma: erasure tuning must lie in (0, 1)")
        if self.scheme == "alternating":
            if self.r is None or not 0 < self.r < 1:
                raise ScheduleError("r: rate split must lie in (0, 1)")
            for size in _alt_sizes(self.m, self.r):
                if size < 2:
                    raise ScheduleError("r: rounded message alphabet below 2")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "StreamParams":
        return cls(**d)

    @property
    def period(self) -> int:
        return self.a - self.b + 1


@dataclass(frozen=True)
class DecodeStep:
    """One threshold test: choose ``targets`` using the outputs of ``window`` blocks.

    Free messages run from the first target through the last window block; all
    earlier messages in the window's encode spans are taken from earlier steps.
    """

    targets: tuple[int, int]
    window: tuple[int, int]
    multiplier: float
    kind: str

    @property
    def free(self) -> tuple[int, int]:
        return self.targets[0], self.window[1]

    def to_dict(self) -> dict:
        return {
            "targets": list(self.targets),
            "window": list(self.window),
            "multiplier": self.multiplier,
            "kind": self.kind,
        }


def deadline(params: StreamParams, k: int) -> int:
    return k + params.t - 1


def _alt_sizes(m: int, r: float) -> tuple[int, int]:
    return max(round(m ** r), 1), max(round(m ** (2 - r)), 1)


def message_alphabet(params: StreamParams, k: int) -> int:
    if k < 1:
        raise ScheduleError("message index must be >= 1")
    if params.scheme != "alternating":
        return params.m
    odd, even = _alt_sizes(params.m, params.r)
    return odd if k % 2 == 1 else even


def period_blocks(params: StreamParams, q: int) -> range:
    """S(q): the blocks of the q-th period after the first A blocks."""
    p = params.period
    return range(p * q + params.b, p * (q + 1) + params.b)


def message_group(params: StreamParams, q: int) -> range:
    """P(q): messages whose last encoding block is (A-B+1) q + B - 1."""
    p = params.period
    return range(p * (q - 1) + 1, p * q + 1)


def group_of(params: StreamParams, k: int) -> int:
    return (k - 1) // params.period + 1


def encode_span(params: StreamParams, k: int) -> tuple[int, int]:
    """First and last message index mapped into the codeword of block ``k``."""
    if k < 1:
        raise ScheduleError("block index must be >= 1")
    if params.scheme != "cl_truncated" or k <= params.a:
        return 1, k
    q = (k - params.b) // params.period
    return q * params.period + 1, k


def _sequential(first: int, last: int, end: int) -> list[DecodeStep]:
    return [DecodeStep((j, j), (j, end), float(end - j + 1), SEQUENTIAL) for j in range(first, last + 1)]


def decode_plan(params: StreamParams, k: int) -> list[DecodeStep]:
    """Ordered decoding steps that produce the estimate of ``G_k`` at its deadline."""
    if k < 1:
        raise ScheduleError("message index must be >= 1")
    tk = deadline(params, k)
    if params.scheme in ("md_infinite", "erasure", "vardelay"):
        return _sequential(1, k, tk)
    if params.scheme == "alternating":
        return _alternating_plan(params, k)
    return _truncated_plan(params, k)


def vardelay_plan(params: StreamParams, k: int, d: int) -> list[DecodeStep]:
    """The erasure decoder's plan for ``G_k`` run with delay ``d`` instead of ``T``."""
    if d < 1:
        raise ScheduleError("delay must be >= 1")
    return _sequential(1, k, k + d - 1)


def _alternating_plan(params: StreamParams, k: int) -> list[DecodeStep]:
    t, r = params.t, params.r
    tk = deadline(params, k)
    same_parity = (k % 2) == (t % 2)
    end = tk if same_parity else tk - 1
    steps = _sequential(1, k, end)
    if k % 2 == 1:
        last = steps[-1]
        mult = t + r - 1 if t % 2 == 1 else t + r - 2
        steps[-1] = DecodeStep(last.targets, last.window, float(mult), SEQUENTIAL)
    return steps


def _truncated_plan(params: StreamParams, k: int) -> list[DecodeStep]:
    a, b, t = params.a, params.b, params.t
    p = params.period
    q = group_of(params, k)
    tk = deadline(params, k)
    if q == 1:
        return _sequential(1, k, tk)
    if p < b:
        raise ScheduleError(
            f"a: three-step decoding needs A - B + 1 >= B (got A={a}, B={b})"
        )
    s = (q - 2) * p
    alpha = min(s + a, tk)
    steps = [DecodeStep((s + 1, s + b), (s + b, alpha), float(alpha - s), SIMULTANEOUS)]
    steps += _sequential(s + b + 1, s + p, alpha)
    steps += _sequential(s + p + 1, k, tk)
    return steps


def cl_defaults(n: int, delta: float, l_rate: float, v: float, t: int) -> tuple[int, int]:
    """A = ceil(n^(1-delta)) and B = max(ceil((V/L^2) delta ln n), T)."""
    if not 0 < delta < 0.5:
        raise ScheduleError("delta must lie in (0, 1/2)")
    if l_rate <= 0 or v <= 0:
        raise ScheduleError("need positive second-order rate and dispersion")
    a = math.ceil(n ** (1 - delta) - 1e-9)
    b = max(math.ceil(v / l_rate ** 2 * delta * math.log(n) - 1e-9), t)
    if a - b + 1 < b or a < 2 * b - t - 2:
        raise ScheduleError(
            f"n={n} too small: A={a}, B={b} violate A >= 2B - 1; increase n"
        )
    return a, b


def dump(params: StreamParams, first: int, last: int) -> dict:
    """Encode spans and decode plans for blocks/messages ``first..last``."""
    rows = []
    for k in range(first, last + 1):
        lo, hi = encode_span(params, k)
        rows.append({
            "k": k,
            "encode_span": [lo, hi],
            "memory": hi - lo + 1,
            "alphabet": message_alphabet(params, k),
            "deadline": deadline(params, k),
            "decode_plan": [s.to_dict() for s in decode_plan(params, k)],
        })
    return {"params": params.to_dict(), "blocks": rows}
