"""Streaming encoder and threshold decoders (basic, erasure, variable delay, alternating).

Message values are 0-based; the default estimate is value 0.
The decoder is exhaustive: for every decoding step it scores all completions
of the free messages, batched over independent trials that share a codebook.
"""

from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import codebook
from .channel import Dmc, InputDist, capacity, density_table, seq_info_density
from .schedule import (
    DecodeStep,
    StreamParams,
    decode_plan,
    deadline,
    encode_span,
    message_alphabet,
    vardelay_plan,
)

ERASURE = -1
MAX_COMBINATIONS = 2 ** 20
FULL_DENSITY_ROWS = 1024
SCORE_BUDGET = 2 ** 22

KINDS = ("correct", "undetected_error", "erasure", "defaulted")
CORRECT, UNDETECTED, ERASED, DEFAULTED = range(4)


class DecodeError(ValueError):
    """Outputs or prefixes do not cover what a decoding step needs."""


class SearchCapError(RuntimeError):
    """A decoding step would enumerate more completions than the search cap allows."""


@dataclass(frozen=True)
class DecodeOutcome:
    estimate: int
    kind: str | None
    delay: int
    trace: tuple = field(default=(), compare=False)

    @property
    def is_erasure(self) -> bool:
        return self.estimate == ERASURE


@dataclass
class BatchOutcome:
    """Per-trial results of decoding one message index across a batch."""

    estimate: np.ndarray
    unique: np.ndarray
    delay: np.ndarray

    def kinds(self, truth: np.ndarray) -> np.ndarray:
        out = np.full(self.estimate.shape, UNDETECTED, dtype=np.int8)
        out[self.estimate == truth] = CORRECT
        out[(self.estimate != truth) & ~self.unique] = DEFAULTED
        out[self.estimate == ERASURE] = ERASED
        return out


def _radix(values: np.ndarray, sizes: Sequence[int]) -> np.ndarray:
    idx = np.zeros(values.shape[0], dtype=np.int64)
    for col, size in enumerate(sizes):
        idx = idx * size + values[:, col]
    return idx


class _Batch:
    """Outputs of a set of trials plus per-block density caches."""

    def __init__(self, code: "StreamCode", ys: np.ndarray):
        self.code = code
        self.ys = ys
        self.full: dict[int, np.ndarray] = {}

    def subset(self, rows: np.ndarray) -> "_Batch":
        sub = _Batch(self.code, self.ys[rows])
        sub.full = {b: d[rows] for b, d in self.full.items()}
        return sub

    def _full_density(self, b: int) -> np.ndarray:
        if b not in self.full:
            table = self.code.table(b)
            y = self.ys[:, b - 1, :]
            acc = np.zeros((y.shape[0], table.shape[0]))
            for pos in range(table.shape[1]):
                acc += self.code.idens_t[y[:, pos]][:, table[:, pos]]
            self.full[b] = acc
        return self.full[b]

    def density(self, b: int, base: np.ndarray, count: int, rows: slice) -> np.ndarray:
        """Densities of table rows base..base+count-1 of block b against each trial's output."""
        offsets = base[:, None] + np.arange(count)[None, :]
        if self.code.table_rows(b) <= FULL_DENSITY_ROWS:
            return np.take_along_axis(self._full_density(b)[rows], offsets, axis=1)
        x = self.code.rows(b, offsets.ravel()).reshape(offsets.shape + (-1,))
        y = self.ys[rows, b - 1, :]
        acc = np.zeros(offsets.shape)
        for pos in range(x.shape[2]):
            acc += np.take_along_axis(self.code.idens_t[y[:, pos]], x[:, :, pos], axis=1)
        return acc


class StreamCode:
    """One codebook realization of a streaming scheme over a given channel."""

    def __init__(self, params: StreamParams, channel: Dmc, dist: InputDist, seed: int,
                 max_combinations: int = MAX_COMBINATIONS):
        if len(dist) != channel.inputs:
            raise DecodeError("input distribution does not match the channel")
        self.params = params
        self.channel = channel
        self.dist = dist
        self.seed = seed
        self.max_combinations = max_combinations
        self.idens = density_table(channel, dist)
        self.idens_t = np.ascontiguousarray(self.idens.T)
        self.rho_n = params.rho_n
        if params.scheme in ("erasure", "vardelay") and self.rho_n is None:
            c = capacity(channel)[1].capacity
            self.rho_n = c - math.log(params.m) / params.n
        self._tables: dict[int, np.ndarray] = {}
        self._lock = threading.Lock()

    # -- encoder -----------------------------------------------------------

    def alphabet(self, j: int) -> int:
        return message_alphabet(self.params, j)

    def table_rows(self, k: int) -> int:
        return codebook.table_rows(self.params, k)

    def table(self, k: int) -> np.ndarray:
        tab = self._tables.get(k)
        if tab is None:
            with self._lock:
                tab = self._tables.get(k)
                if tab is None:
                    tab = codebook.block_table(self.params, self.seed, k, self.dist)
                    self._tables[k] = tab
        return tab

    def encode_block(self, k: int, g_true: Sequence[int]) -> np.ndarray:
        """Codeword of block k given messages G_1..G_j for some j >= k."""
        lo, hi = encode_span(self.params, k)
        if len(g_true) < hi:
            raise DecodeError(f"block {k} needs messages through G_{hi}, got {len(g_true)}")
        return codebook.codeword(self.params, self.seed, k, list(g_true[lo - 1:hi]), self.dist)

    def transmit(self, g_true: np.ndarray, blocks: int) -> np.ndarray:
        """Codewords for blocks 1..blocks of each trial: (trials, blocks, n)."""
        trials = g_true.shape[0]
        if g_true.shape[1] < blocks:
            raise DecodeError(f"transmitting {blocks} blocks needs {blocks} messages per trial")
        out = np.empty((trials, blocks, self.params.n), dtype=np.intp)
        for b in range(1, blocks + 1):
            lo, hi = encode_span(self.params, b)
            sizes = [self.alphabet(j) for j in range(lo, hi + 1)]
            out[:, b - 1, :] = self.rows(b, _radix(g_true[:, lo - 1:hi], sizes))
        return out

    def rows(self, k: int, indices: np.ndarray) -> np.ndarray:
        """Codewords of block k for the given tuple indices.

        Small or heavily used blocks go through the cached table; sparse
        lookups into large blocks are evaluated on demand instead.
        """
        total = self.table_rows(k)
        dense = 4 * indices.size >= total and total * max(self.params.n, 1) <= codebook.TABLE_LIMIT
        if k in self._tables or total <= FULL_DENSITY_ROWS or dense:
            return self.table(k)[indices]
        uniq, inv = np.unique(indices, return_inverse=True)
        return codebook.codewords(self.params, self.seed, k, uniq, self.dist)[inv.reshape(-1)]

    # -- thresholds --------------------------------------------------------

    @property
    def erasing(self) -> bool:
        return self.params.scheme in ("erasure", "vardelay")

    def threshold(self, step: DecodeStep) -> float:
        unit = math.log(self.params.m)
        if self.erasing:
            unit += self.params.gamma * self.params.n * self.rho_n
        return step.multiplier * unit

    def _window_codewords(self, step: DecodeStep, messages: Sequence[int]) -> list[np.ndarray]:
        return [self.encode_block(b, messages) for b in range(step.window[0], step.window[1] + 1)]

    def threshold_test(self, step: DecodeStep, fixed_prefix: Sequence[int], candidate: Sequence[int],
                       ys: np.ndarray) -> bool:
        """Strict test of the window density against the step threshold, for one candidate."""
        t0, _ = step.targets
        w0, w1 = step.window
        if len(fixed_prefix) < t0 - 1:
            raise DecodeError(f"step needs decided messages G_1..G_{t0 - 1}")
        if len(candidate) != w1 - t0 + 1:
            raise DecodeError(f"candidate must cover messages {t0}..{w1}")
        ys = np.asarray(ys)
        if ys.ndim != 2 or ys.shape[0] < w1 or ys.shape[1] != self.params.n:
            raise DecodeError(f"outputs must cover blocks 1..{w1} with {self.params.n} symbols each")
        messages = list(fixed_prefix[:t0 - 1]) + list(candidate)
        xs = np.concatenate(self._window_codewords(step, messages))
        yw = ys[w0 - 1:w1].reshape(-1)
        return seq_info_density(self.channel, self.dist, xs, yw) > self.threshold(step)

    # -- batched decoding --------------------------------------------------

    def _step(self, batch: _Batch, step: DecodeStep, est: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Run one step for every trial; writes decisions into ``est`` and returns (unique, survivors)."""
        t0, t1 = step.targets
        w0, w1 = step.window
        free = [self.alphabet(j) for j in range(t0, w1 + 1)]
        total = math.prod(free)
        if total > self.max_combinations:
            raise SearchCapError(
                f"decoding step over messages {t0}..{w1} needs {total} combinations "
                f"(cap {self.max_combinations}); use M <= 4 and windows <= 5 blocks"
            )
        n_targets = math.prod(free[: t1 - t0 + 1])
        thr = self.threshold(step)
        trials = est.shape[0]
        survivors = np.zeros(trials, dtype=np.int64)
        winner = np.zeros(trials, dtype=np.int64)
        chunk = max(1, SCORE_BUDGET // total)
        for start in range(0, trials, chunk):
            rows = slice(start, min(start + chunk, trials))
            m = rows.stop - rows.start
            score = np.zeros((m, total))
            pre = 1
            for b in range(w0, w1 + 1):
                lo, _ = encode_span(self.params, b)
                if lo > t0:
                    raise DecodeError(f"block {b} does not carry message {t0}")
                fixed_sizes = [self.alphabet(j) for j in range(lo, t0)]
                base = _radix(est[rows, lo - 1:t0 - 1], fixed_sizes)
                pre = math.prod(free[: b - t0 + 1])
                dens = batch.density(b, base * pre, pre, rows)
                view = score.reshape(m, pre, total // pre)
                view += dens[:, :, None]
            passed = score.reshape(m, n_targets, total // n_targets).max(axis=2) > thr
            survivors[rows] = passed.sum(axis=1)
            winner[rows] = np.argmax(passed, axis=1)
        unique = survivors == 1
        decision = np.where(unique, winner, 0)
        sizes = free[: t1 - t0 + 1]
        for col in range(t1, t0 - 1, -1):
            size = sizes[col - t0]
            est[:, col - 1] = decision % size
            decision //= size
        return unique, survivors

    def _run_plan(self, batch: _Batch, plan: list[DecodeStep], trace: list | None = None):
        trials = batch.ys.shape[0]
        est = np.zeros((trials, plan[-1].window[1]), dtype=np.int64)
        all_unique = np.ones(trials, dtype=bool)
        unique = all_unique
        for i, step in enumerate(plan):
            unique, survivors = self._step(batch, step, est)
            all_unique &= unique
            if trace is not None:
                trace.append(survivors)
        return est, unique, all_unique

    def _check_outputs(self, ys: np.ndarray, need: int) -> np.ndarray:
        ys = np.asarray(ys)
        if ys.ndim != 3 or ys.shape[2] != self.params.n:
            raise DecodeError("outputs must have shape (trials, blocks, n)")
        if ys.shape[1] < need:
            raise DecodeError(f"outputs cover {ys.shape[1]} blocks; decoding needs {need}")
        return ys

    def decode_batch(self, k: int, ys: np.ndarray, batch: _Batch | None = None) -> BatchOutcome:
        """Decode G_k at its deadline for every trial in ``ys`` (trials, blocks, n)."""
        plan = decode_plan(self.params, k)
        ys = self._check_outputs(ys, max(s.window[1] for s in plan))
        batch = batch or _Batch(self, ys)
        est, unique, all_unique = self._run_plan(batch, plan)
        estimate = est[:, k - 1].copy()
        if self.erasing:
            estimate[~all_unique] = ERASURE
        delay = np.full(ys.shape[0], self.params.t, dtype=np.int64)
        return BatchOutcome(estimate, unique, delay)

    def vardelay_batch(self, k: int, ys: np.ndarray, d_max: int, batch: _Batch | None = None) -> BatchOutcome:
        """Erasure decoding with delay T, T+1, ... up to d_max; stops at the first non-erasure."""
        t = self.params.t
        if d_max < t:
            raise DecodeError("d_max must be at least T")
        ys = self._check_outputs(ys, k + d_max - 1)
        trials = ys.shape[0]
        batch = batch or _Batch(self, ys)
        estimate = np.full(trials, ERASURE, dtype=np.int64)
        unique = np.zeros(trials, dtype=bool)
        delay = np.full(trials, d_max, dtype=np.int64)
        pending = np.arange(trials)
        for d in range(t, d_max + 1):
            if pending.size == 0:
                break
            sub = batch if pending.size == trials else batch.subset(pending)
            est, _, all_unique = self._run_plan(sub, vardelay_plan(self.params, k, d))
            done = pending[all_unique]
            estimate[done] = est[all_unique, k - 1]
            unique[done] = True
            delay[done] = d
            pending = pending[~all_unique]
        return BatchOutcome(estimate, unique, delay)

    # -- single-realization API ------------------------------------------

    def decode_step(self, step: DecodeStep, fixed_prefix: Sequence[int], ys: np.ndarray):
        """(decision for the step's targets, unique); erasure variants return (None, False) on failure."""
        t0, t1 = step.targets
        ys = self._check_outputs(np.asarray(ys)[None], step.window[1])
        est = np.zeros((1, step.window[1]), dtype=np.int64)
        est[0, :t0 - 1] = list(fixed_prefix[:t0 - 1])
        unique, _ = self._step(_Batch(self, ys), step, est)
        if not unique[0] and self.erasing:
            return None, False
        return tuple(int(v) for v in est[0, t0 - 1:t1]), bool(unique[0])

    def _outcome(self, out: BatchOutcome, truth: int | None, trace=()) -> DecodeOutcome:
        kind = None
        if truth is not None:
            kind = KINDS[out.kinds(np.array([truth]))[0]]
        return DecodeOutcome(int(out.estimate[0]), kind, int(out.delay[0]), tuple(trace))

    def decode_message(self, k: int, ys: np.ndarray, truth: int | None = None) -> DecodeOutcome:
        """Decode G_k from outputs ``ys`` of shape (blocks, n); classify if ``truth`` is given."""
        plan = decode_plan(self.params, k)
        ys = self._check_outputs(np.asarray(ys)[None], max(s.window[1] for s in plan))
        trace: list = []
        est, unique, all_unique = self._run_plan(_Batch(self, ys), plan, trace)
        estimate = int(est[0, k - 1])
        if self.erasing and not all_unique[0]:
            estimate = ERASURE
        out = BatchOutcome(np.array([estimate]), unique, np.array([self.params.t]))
        steps = tuple((i, int(c[0])) for i, c in enumerate(trace))
        return self._outcome(out, truth, steps)

    def decode_vardelay(self, k: int, ys_stream: np.ndarray, d_max: int, truth: int | None = None) -> DecodeOutcome:
        out = self.vardelay_batch(k, np.asarray(ys_stream)[None], d_max)
        return self._outcome(out, truth)


def deadline_block(params: StreamParams, k: int) -> int:
    """Last output block the fixed-delay decoder of G_k reads."""
    return max(s.window[1] for s in decode_plan(params, k))


__all__ = [
    "BatchOutcome", "DecodeError", "DecodeOutcome", "ERASURE", "KINDS", "MAX_COMBINATIONS",
    "SearchCapError", "StreamCode", "deadline", "deadline_block",
]
