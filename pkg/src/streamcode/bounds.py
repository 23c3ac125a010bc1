"""Closed-form error bounds and the large/moderate-deviations machinery behind them.

Everything is in nats. ``mu`` is the normalized second-order rate L/sqrt(V).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import optimize, special

from .channel import Dmc, InputDist, measures, density_table

QSUM_BUDGET = 1e-12
K_GRID_POINTS = 10_001

VARIANTS = ("basic", "erasure_total", "erasure_undetected", "vardelay", "alt_odd", "alt_even")


def q_func(x: float) -> float:
    """Gaussian tail Q(x) = 1 - Phi(x)."""
    return 0.5 * float(special.erfc(x / math.sqrt(2.0)))


def _phi(x: float) -> float:
    return math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)


def qsum_tail_bound(mu: float, start: int) -> float:
    """Upper bound on sum_{j >= start} Q(mu sqrt(j)) from Q(x) <= phi(x)/x and a geometric series."""
    r = math.exp(-0.5 * mu * mu)
    return _phi(mu * math.sqrt(start)) / (mu * math.sqrt(start)) / (1.0 - r)


def qsum_terms_needed(mu: float, t: int, budget: float = QSUM_BUDGET) -> int:
    """Smallest number of terms after which the certified remainder is below ``budget``."""
    terms = 1
    while qsum_tail_bound(mu, t + terms) >= budget:
        terms *= 2
    lo, hi = terms // 2, terms
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if qsum_tail_bound(mu, t + mid) < budget:
            hi = mid
        else:
            lo = mid
    return max(hi, 1)


def q_sum(mu: float, t: int, terms: int | str = "auto") -> float:
    """sum_{j=t}^{inf} Q(mu sqrt(j)), truncated at a certified remainder."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if t < 1:
        raise ValueError("t must be >= 1")
    count = qsum_terms_needed(mu, t) if terms == "auto" else int(terms)
    j = np.arange(t, t + count, dtype=np.float64)
    vals = 0.5 * special.erfc(mu * np.sqrt(j) / math.sqrt(2.0))
    return math.fsum(vals[::-1].tolist())


def c_llt(mu: float, t: int) -> float:
    """Multiplicative constant c with sum_{j>=t} Q(mu sqrt j) <= c Q(mu sqrt t)."""
    if mu <= 0 or t < 1:
        raise ValueError("need mu > 0 and t >= 1")
    m2t = mu * mu * t
    return (1.0 + m2t) / m2t / (-math.expm1(-0.5 * mu * mu))


def sum_le_integral_check(a: int, b: int) -> tuple[float, float]:
    """Compare sum_{j=a}^{b} 1/sqrt(j) with 2 sqrt(b) - 2 sqrt(a-1)."""
    if not 1 <= a <= b:
        raise ValueError("need 1 <= a <= b")
    lhs = math.fsum(1.0 / math.sqrt(j) for j in range(a, b + 1))
    rhs = 2.0 * math.sqrt(b) - 2.0 * math.sqrt(a - 1)
    assert lhs <= rhs, (lhs, rhs)
    return lhs, rhs


@dataclass(frozen=True)
class CgfModel:
    """A finite-support zero-mean summand Z with its cumulant generating function."""

    values: np.ndarray
    probs: np.ndarray
    sigma2: float
    k: float

    @classmethod
    def from_support(cls, values, probs, *, center: bool = False) -> "CgfModel":
        values = np.asarray(values, dtype=np.float64)
        probs = np.asarray(probs, dtype=np.float64)
        keep = probs > 0
        values, probs = values[keep], probs[keep]
        if abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must sum to 1")
        mean = float(probs @ values)
        if center:
            values = values - mean
            mean = float(probs @ values)
        if abs(mean) > 1e-12:
            raise ValueError(f"summand must have zero mean, got {mean:.3e}")
        sigma2 = float(probs @ (values - mean) ** 2)
        if not sigma2 > 0:
            raise ValueError("degenerate summand: variance is zero")
        model = cls(values, probs, sigma2, 0.0)
        return cls(values, probs, sigma2, model._max_abs_h3())

    @property
    def z_max(self) -> float:
        return float(self.values.max())

    def _tilt(self, s: float) -> np.ndarray:
        a = np.log(self.probs) + s * self.values
        a -= a.max()
        q = np.exp(a)
        return q / q.sum()

    def h(self, s: float) -> float:
        return float(special.logsumexp(s * self.values, b=self.probs))

    def h1(self, s: float) -> float:
        return float(self._tilt(s) @ self.values)

    def h2(self, s: float) -> float:
        q = self._tilt(s)
        m = q @ self.values
        return float(q @ (self.values - m) ** 2)

    def h3(self, s: float) -> float:
        # third derivative of a CGF is the third central moment of the tilted law
        q = self._tilt(s)
        m = q @ self.values
        return float(q @ (self.values - m) ** 3)

    def _max_abs_h3(self) -> float:
        grid = np.linspace(0.0, 1.0, K_GRID_POINTS)
        a = np.log(self.probs)[None, :] + grid[:, None] * self.values[None, :]
        a -= a.max(axis=1, keepdims=True)
        q = np.exp(a)
        q /= q.sum(axis=1, keepdims=True)
        m = q @ self.values
        c3 = np.abs(np.einsum("ij,ij->i", q, (self.values[None, :] - m[:, None]) ** 3))
        i = int(np.argmax(c3))
        best = float(c3[i])
        lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, grid.size - 1)]
        if hi > lo:
            res = optimize.minimize_scalar(
                lambda s: -abs(self.h3(s)), bounds=(lo, hi), method="bounded",
                options={"xatol": 1e-12},
            )
            best = max(best, -float(res.fun))
        return best

    def third_abs_moment(self) -> float:
        return float(self.probs @ np.abs(self.values) ** 3)


def berry_esseen_constant(model: CgfModel, c0: float = 0.56) -> float:
    """Classical Berry-Esseen constant c0 E|Z|^3 / sigma^3 for the standardized sum."""
    return c0 * model.third_abs_moment() / model.sigma2 ** 1.5


def cgf_from_channel(ch: Dmc, p: InputDist, merge_tol: float = 1e-12) -> CgfModel:
    """Law of Z = i(X;Y) - I(P,W) under P(x)W(y|x), with equal density values merged."""
    joint = p.p[:, None] * ch.w
    mask = joint > 0
    dens = density_table(ch, p)[mask]
    if np.any(~np.isfinite(dens)):
        raise ValueError("information density is not finite on the support")
    weights = joint[mask]
    order = np.argsort(dens, kind="stable")
    dens, weights = dens[order], weights[order]
    vals, probs = [], []
    for d, w in zip(dens.tolist(), weights.tolist()):
        if vals and abs(d - vals[-1]) <= merge_tol:
            probs[-1] += w
        else:
            vals.append(d)
            probs.append(w)
    mi = measures(ch, p).mutual_info
    values = np.array(vals) - mi
    probs = np.array(probs)
    probs /= probs.sum()
    return CgfModel.from_support(values, probs)


def md_bound(model: CgfModel, n: int, eps_n: float) -> float:
    """exp{-n (eps^2/(2 sigma^2) - eps^3 K/(6 sigma^6))}, clamped to at most 1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if eps_n < 0:
        raise ValueError("eps_n must be non-negative")
    s2 = model.sigma2
    expo = -n * (eps_n ** 2 / (2 * s2) - eps_n ** 3 * model.k / (6 * s2 ** 3))
    return 1.0 if expo >= 0 else math.exp(expo)


def rate_function(model: CgfModel, eps: float, tol: float = 1e-12) -> float:
    """sup_{s >= 0} {s eps - h(s)} by ternary search over an expanding bracket."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    if eps > model.z_max:
        return math.inf
    if eps == model.z_max:
        return -math.log(float(model.probs[np.argmax(model.values)]))

    def f(s):
        return s * eps - model.h(s)

    hi = 1.0
    while model.h1(hi) < eps:
        hi *= 2.0
    lo = 0.0
    while hi - lo > tol * max(1.0, hi):
        m1 = lo + (hi - lo) / 3
        m2 = hi - (hi - lo) / 3
        if f(m1) < f(m2):
            lo = m1
        else:
            hi = m2
    rate = f(0.5 * (lo + hi))
    assert rate > 0, rate
    return rate


def cramer_bound(model: CgfModel, n: int, eps: float) -> float:
    """exp{-n I(eps)}; zero above the support, p_max^n exactly at its top."""
    rate = rate_function(model, eps)
    return 0.0 if math.isinf(rate) else math.exp(-n * rate)


@dataclass(frozen=True)
class BoundParams:
    tau: float = 0.0
    tau1: float = 0.0
    tau2: float = 0.0
    tau_prime: float = 0.0
    lam: float = 0.9
    gamma: float = 0.5
    mu: float | None = None

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise ValueError("lambda must lie in (0, 1)")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if min(self.tau, self.tau1, self.tau2, self.tau_prime) < 0:
            raise ValueError("tau constants must be non-negative")


def md_exponent_targets(v: float, t: int, variant: str, gamma: float, n: int, rho_n: float) -> float:
    """Asymptotic upper bound on log(error), evaluated at finite (n, rho_n)."""
    if v <= 0:
        raise ValueError("dispersion must be positive")
    nr2 = n * rho_n * rho_n
    if variant == "basic":
        return -t / (2 * v) * nr2
    if variant in ("erasure_total", "erasure_undetected"):
        if not 0 < gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
    if variant == "erasure_total":
        return -t * (1 - gamma) ** 2 / (2 * v) * nr2
    if variant == "erasure_undetected":
        return -t * gamma * n * rho_n
    if variant == "vardelay":
        return -t * n * rho_n
    if variant in ("alt_odd", "alt_even"):
        if t % 2 == 0:
            return -t / (2 * v) * nr2
        shift = 1 if variant == "alt_odd" else -1
        return -(t + shift) / (2 * v) * nr2
    raise ValueError(f"unknown variant {variant!r}")


def _geometric(first_exp: float, ratio_exp: float) -> float | None:
    """exp(-first)/(1 - exp(-ratio)); None when the ratio is not below 1."""
    if ratio_exp <= 0:
        return None
    return math.exp(-first_exp) / -math.expm1(-ratio_exp)


def finite_md_rhs(v: float, t: int, n: int, rho_n: float, params: BoundParams) -> float:
    """Two-geometric-series ensemble bound for the infinite-memory scheme (1.0 when vacuous)."""
    lam, tau = params.lam, params.tau
    a = n * rho_n ** 2 * lam ** 2 * (1 / (2 * v) - lam * rho_n * tau)
    b = n * (1 - lam) * rho_n
    first = _geometric(t * a, a)
    second = _geometric(t * b, b)
    if first is None or second is None:
        return 1.0
    return first + second


def erasure_total_bound(v: float, t: int, n: int, rho_n: float, gamma: float, tau: float = 0.0) -> float:
    a = n * rho_n ** 2 * (1 - gamma) ** 2 * (1 / (2 * v) - (1 - gamma) * rho_n * tau)
    b = n * gamma * rho_n
    first = _geometric(t * a, a)
    second = _geometric(t * b, b)
    if first is None or second is None:
        return 1.0
    return first + second


def erasure_undetected_bound(t: int, n: int, rho_n: float, gamma: float) -> float:
    b = n * gamma * rho_n
    val = _geometric(t * b, b)
    return 1.0 if val is None else val


def vardelay_error_bound(t: int, n: int, rho_n: float, gamma: float) -> float:
    """Undetected-error bound summed over every delay d >= t."""
    b = n * gamma * rho_n
    if b <= 0:
        return 1.0
    return math.exp(-t * b) / math.expm1(-b) ** 2


def vardelay_excess_delay_bound(v: float, t: int, n: int, rho_n: float, gamma: float, tau: float = 0.0) -> float:
    """Bound on E[D_k] - T from the total-error bound at delay d-1, summed in closed form."""
    a = n * rho_n ** 2 * (1 - gamma) ** 2 * (1 / (2 * v) - (1 - gamma) * rho_n * tau)
    b = n * gamma * rho_n
    if a <= 0 or b <= 0:
        return math.inf
    total = 0.0
    for e in (a, b):
        # sum_{d >= t+1} (d - t) exp(-(d-1) e) = exp(-t e) / (1 - exp(-e))^2
        total += math.exp(-t * e) / math.expm1(-e) ** 2 / -math.expm1(-e)
    return total


def alternating_bound(v: float, t: int, n: int, rho_n: float, r: float, parity: str,
                      params: BoundParams) -> float:
    """Ensemble bound for odd/even messages under alternating rates."""
    if t % 2 == 0:
        return finite_md_rhs(v, t, n, rho_n, params)
    if parity == "even":
        return finite_md_rhs(v, t - 1, n, rho_n, params) if t > 1 else 1.0
    lam = params.lam
    last = math.exp(-t * n * params.tau_prime) + math.exp(-(t + r - 1) * n * (1 - lam) * rho_n)
    return min(1.0, finite_md_rhs(v, t + 1, n, rho_n, params) + last)


def alt_tau_prime(model: CgfModel, c: float, t: int, r: float) -> float:
    """Cramer rate for the odd-window event sum_{nT} i <= (T+r-1) n C, per channel use."""
    flipped = CgfModel.from_support(-model.values, model.probs)
    return rate_function(flipped, (1 - r) * c / t)


def cl_error_bound(v: float, l_rate: float, t: int, a: int, b: int, n: int,
                   tau1: float = 0.0, tau2: float = 0.0) -> float:
    """Truncated-memory ensemble bound before the closed-form Q-sum step."""
    mu = l_rate / math.sqrt(v)
    tau = tau1 + tau2
    total = 0.0
    for j in list(range(b, a - b + 2)) + list(range(t, a - b + t + 1)):
        total += q_func(mu * math.sqrt(j)) + tau / math.sqrt(j * n)
    return total


def cl_error_bound_closed(v: float, l_rate: float, t: int, a: int, b: int, n: int,
                          tau1: float = 0.0, tau2: float = 0.0) -> float:
    """Closed form: Gaussian-tail geometric series over [B, inf) plus the integral bound."""
    mu = l_rate / math.sqrt(v)
    head = math.exp(-mu * mu * b / 2) / (math.sqrt(2 * math.pi * b) * mu) / -math.expm1(-mu * mu / 2)
    mid = math.fsum(q_func(mu * math.sqrt(j)) for j in range(t, a - b + t + 1))
    return head + mid + 4 * (tau1 + tau2) * math.sqrt((a - b + t) / n)


def cl_log_m(n: int, c: float, l_rate: float, a: int, b: int, t: int) -> float:
    """Per-message log-size for the truncated-memory scheme."""
    return (a - 2 * b + t + 2) / a * (n * c - l_rate * math.sqrt(n))


def sum_distribution(model_values, model_probs, length: int, merge_tol: float = 1e-9):
    """Exact law of a sum of ``length`` i.i.d. finite-support draws, as (values, probs).

    Atoms closer than ``merge_tol`` are merged.
    """
    vals = np.array([0.0])
    probs = np.array([1.0])
    step_v = np.asarray(model_values, dtype=np.float64)
    step_p = np.asarray(model_probs, dtype=np.float64)
    for _ in range(length):
        nv = (vals[:, None] + step_v[None, :]).ravel()
        npb = (probs[:, None] * step_p[None, :]).ravel()
        order = np.argsort(nv, kind="stable")
        nv, npb = nv[order], npb[order]
        starts = np.concatenate(([True], np.diff(nv) > merge_tol))
        idx = np.cumsum(starts) - 1
        vals = nv[starts]
        probs = np.bincount(idx, weights=npb)
    return vals, probs


def dt_step_bound(ch: Dmc, p: InputDist, symbols: int, threshold: float, log_count: float) -> float:
    """Exact union bound for one threshold test over ``symbols`` channel uses.

    P(i(X;Y) <= thr) + exp(log_count) * E[exp(-i(X;Y)) 1{i(X;Y) > thr}], the
    second term being the change-of-measure form of the wrong-codeword probability.
    """
    joint = p.p[:, None] * ch.w
    mask = joint > 0
    dens = density_table(ch, p)[mask]
    vals, probs = sum_distribution(dens, joint[mask], symbols)
    miss = float(probs[vals <= threshold].sum())
    above = vals > threshold
    false = float(np.sum(probs[above] * np.exp(log_count - vals[above])))
    return min(1.0, miss + false)


def wrong_codeword_tail(ch: Dmc, p: InputDist, symbols: int, threshold: float) -> tuple[float, float]:
    """P(i(X;Ybar) > thr) computed directly and through the change of measure.

    The two values agree exactly; returns (direct, tilted).
    """
    pw = p.p @ ch.w
    prod = p.p[:, None] * pw[None, :]
    dens_all = density_table(ch, p)
    mask_d = (prod > 0) & np.isfinite(dens_all)
    vals_d, probs_d = sum_distribution(dens_all[mask_d], prod[mask_d], symbols)
    direct = float(probs_d[vals_d > threshold].sum())
    joint = p.p[:, None] * ch.w
    mask = joint > 0
    vals, probs = sum_distribution(dens_all[mask], joint[mask], symbols)
    above = vals > threshold
    tilted = float(np.sum(probs[above] * np.exp(-vals[above])))
    return direct, tilted
