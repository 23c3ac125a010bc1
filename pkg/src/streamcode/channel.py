"""Discrete memoryless channels and their single-letter information quantities.

All logarithms are natural (nats). Pairs with ``P(x) W(y|x) = 0`` contribute
nothing to expectations; an information density at ``W(y|x) = 0`` is ``-inf``.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

ROW_TOL = 1e-12


class ChannelError(ValueError):
    """Invalid channel, distribution, or symbol."""


class CapacityError(RuntimeError):
    """Blahut-Arimoto did not reach the requested bracket."""

    def __init__(self, message: str, bracket: float):
        super().__init__(message)
        self.bracket = bracket


class DispersionWarning(UserWarning):
    """U(P,W) and V(P,W) disagree: P is not capacity-achieving to tolerance."""


@dataclass(frozen=True, eq=False)
class Dmc:
    """A DMC given by its row-stochastic transition matrix ``w[x, y] = W(y|x)``."""

    w: np.ndarray

    def __post_init__(self):
        w = np.array(self.w, dtype=np.float64)
        if w.ndim != 2:
            raise ChannelError("transition matrix must be two-dimensional")
        if w.shape[0] < 2 or w.shape[1] < 2:
            raise ChannelError(f"need |X| >= 2 and |Y| >= 2, got {w.shape}")
        if not np.all(np.isfinite(w)) or np.any(w < 0) or np.any(w > 1):
            raise ChannelError("transition probabilities must lie in [0, 1]")
        bad = np.abs(w.sum(axis=1) - 1.0) > ROW_TOL
        if np.any(bad):
            raise ChannelError(f"rows {np.flatnonzero(bad).tolist()} do not sum to 1")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def inputs(self) -> int:
        return self.w.shape[0]

    @property
    def outputs(self) -> int:
        return self.w.shape[1]

    def __eq__(self, other):
        return isinstance(other, Dmc) and np.array_equal(self.w, other.w)

    def __hash__(self):
        return hash(self.w.tobytes())

    def to_dict(self) -> dict:
        return {"inputs": self.inputs, "outputs": self.outputs, "rows": self.w.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "Dmc":
        ch = cls(np.asarray(d["rows"], dtype=np.float64))
        if "inputs" in d and d["inputs"] != ch.inputs:
            raise ChannelError(f"'inputs' is {d['inputs']} but rows give {ch.inputs}")
        if "outputs" in d and d["outputs"] != ch.outputs:
            raise ChannelError(f"'outputs' is {d['outputs']} but rows give {ch.outputs}")
        return ch


def bsc(q: float) -> Dmc:
    return Dmc(np.array([[1 - q, q], [q, 1 - q]]))


def bec(e: float) -> Dmc:
    """Binary erasure channel; output 1 is the erasure symbol."""
    return Dmc(np.array([[1 - e, e, 0.0], [0.0, e, 1 - e]]))


def identity(k: int) -> Dmc:
    return Dmc(np.eye(k))


def useless(k: int, m: int) -> Dmc:
    """Every row is the same uniform distribution, so I(P,W) = 0 for all P."""
    return Dmc(np.full((k, m), 1.0 / m))


def parse_channel(spec: str) -> Dmc:
    """Parse ``bsc:p``, ``bec:e``, ``identity:k`` or a path to a JSON matrix file."""
    name, sep, arg = spec.partition(":")
    try:
        if sep and name == "bsc":
            return bsc(float(arg))
        if sep and name == "bec":
            return bec(float(arg))
        if sep and name == "identity":
            return identity(int(arg))
    except ValueError as exc:
        raise ChannelError(f"bad channel shortcut {spec!r}: {exc}") from exc
    path = Path(spec)
    if not path.is_file():
        raise ChannelError(f"unknown channel spec {spec!r}")
    return Dmc.from_dict(json.loads(path.read_text()))


@dataclass(frozen=True, eq=False)
class InputDist:
    p: np.ndarray

    def __post_init__(self):
        p = np.array(self.p, dtype=np.float64)
        if p.ndim != 1 or p.size < 1:
            raise ChannelError("input distribution must be a non-empty vector")
        if np.any(p < 0) or abs(p.sum() - 1.0) > ROW_TOL:
            raise ChannelError("input distribution must be non-negative and sum to 1")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    def __len__(self):
        return self.p.size

    def __eq__(self, other):
        return isinstance(other, InputDist) and np.array_equal(self.p, other.p)

    def __hash__(self):
        return hash(self.p.tobytes())

    @classmethod
    def uniform(cls, k: int) -> "InputDist":
        return cls(np.full(k, 1.0 / k))


@dataclass(frozen=True)
class InfoMeasures:
    mutual_info: float
    u_var: float
    v_var: float
    capacity: float | None = None
    dispersion: float | None = None
    p_star: InputDist | None = field(default=None, compare=False)
    bracket: float | None = None
    iterations: int | None = None


def _check(ch: Dmc, p: InputDist) -> None:
    if len(p) != ch.inputs:
        raise ChannelError(f"distribution has {len(p)} entries, channel has {ch.inputs} inputs")


def output_dist(ch: Dmc, p: InputDist) -> np.ndarray:
    return p.p @ ch.w


def density_table(ch: Dmc, p: InputDist) -> np.ndarray:
    """``i(x;y)`` for every pair; ``-inf`` where W(y|x)=0, ``nan`` where PW(y)=0."""
    _check(ch, p)
    pw = output_dist(ch, p)
    with np.errstate(divide="ignore", invalid="ignore"):
        table = np.log(ch.w) - np.log(pw)[None, :]
    table[:, pw == 0] = np.nan
    return table


def info_density(ch: Dmc, p: InputDist, x: int, y: int) -> float:
    _check(ch, p)
    pwy = float(p.p @ ch.w[:, y])
    if pwy == 0.0:
        raise ChannelError(f"output symbol {y} is unreachable under this input distribution")
    wyx = float(ch.w[x, y])
    if wyx == 0.0:
        return -math.inf
    return math.log(wyx) - math.log(pwy)


def seq_info_density(ch: Dmc, p: InputDist, xs: Sequence[int], ys: Sequence[int]) -> float:
    xs = np.asarray(xs, dtype=np.intp)
    ys = np.asarray(ys, dtype=np.intp)
    if xs.shape != ys.shape or xs.ndim != 1:
        raise ChannelError(f"sequence lengths differ: {xs.shape} vs {ys.shape}")
    if xs.size == 0:
        return 0.0
    table = density_table(ch, p)
    terms = table[xs, ys]
    if np.any(np.isnan(terms)):
        raise ChannelError("sequence contains an output symbol unreachable under this distribution")
    return math.fsum(terms.tolist())


def _joint_terms(ch: Dmc, p: InputDist):
    """Joint weights P(x)W(y|x) and densities, with zero-weight pairs masked out."""
    _check(ch, p)
    joint = p.p[:, None] * ch.w
    mask = joint > 0
    dens = np.where(mask, density_table(ch, p), 0.0)
    return joint, mask, dens


def measures(ch: Dmc, p: InputDist) -> InfoMeasures:
    joint, mask, dens = _joint_terms(ch, p)
    mi = float(np.sum(joint * dens))
    u = float(np.sum(joint * (dens - mi) ** 2))
    # per-input conditional mean and variance of i(x;Y)
    v = 0.0
    for x in range(ch.inputs):
        if p.p[x] == 0:
            continue
        row = ch.w[x]
        m = float(np.sum(row[mask[x]] * dens[x, mask[x]]))
        v += p.p[x] * float(np.sum(row[mask[x]] * (dens[x, mask[x]] - m) ** 2))
    return InfoMeasures(mutual_info=mi, u_var=max(u, 0.0), v_var=max(v, 0.0))


def _divergences(ch: Dmc, p: InputDist) -> np.ndarray:
    """D(W(.|x) || PW) for each input x."""
    pw = output_dist(ch, p)
    out = np.zeros(ch.inputs)
    for x in range(ch.inputs):
        nz = ch.w[x] > 0
        out[x] = np.sum(ch.w[x, nz] * (np.log(ch.w[x, nz]) - np.log(pw[nz])))
    return out


def capacity(ch: Dmc, tol: float = 1e-10, max_iter: int = 100_000) -> tuple[InputDist, InfoMeasures]:
    """Blahut-Arimoto from the uniform input; stops once max_x D_x - I(P) <= tol."""
    if tol <= 0:
        raise ValueError("tol must be positive")
    p = np.full(ch.inputs, 1.0 / ch.inputs)
    bracket = math.inf
    for it in range(1, max_iter + 1):
        d = _divergences(ch, InputDist(p))
        lower = float(p @ d)
        bracket = float(d.max()) - lower
        if bracket <= tol:
            break
        p = p * np.exp(d - d.max())
        p /= p.sum()
    else:
        raise CapacityError(
            f"Blahut-Arimoto did not converge in {max_iter} iterations (bracket {bracket:.3e})",
            bracket,
        )
    p_star = InputDist(p)
    m = measures(ch, p_star)
    disp = dispersion(ch, p_star)
    return p_star, InfoMeasures(
        mutual_info=m.mutual_info,
        u_var=m.u_var,
        v_var=m.v_var,
        capacity=max(m.mutual_info, 0.0),
        dispersion=disp,
        p_star=p_star,
        bracket=max(bracket, 0.0),
        iterations=it,
    )


def dispersion(ch: Dmc, p_star: InputDist, check_tol: float = 1e-8) -> float:
    """V(P*,W). Warns with DispersionWarning if |U - V| exceeds ``check_tol``."""
    m = measures(ch, p_star)
    if abs(m.u_var - m.v_var) > check_tol:
        warnings.warn(
            f"|U - V| = {abs(m.u_var - m.v_var):.3e} > {check_tol:g}; "
            "input distribution is not capacity-achieving to tolerance",
            DispersionWarning,
            stacklevel=2,
        )
    return m.v_var
