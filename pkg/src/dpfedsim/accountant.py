"""Rényi-DP accounting for the sampled Gaussian mechanism.

Per-step RDP comes from the log-space series for integer orders and the
erfc-weighted series for fractional orders; composition is additive and
the (epsilon, delta) conversion uses the tightened RDP-to-DP bound
``eps = rdp + log1p(-1/a) - (log(delta) + log(a)) / (a - 1)``.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import special

from .errors import ConfigurationError

log = logging.getLogger(__name__)

DEFAULT_ORDERS = tuple(
    [1 + x / 10.0 for x in range(1, 100)] + [float(a) for a in range(12, 65)] + [128.0, 256.0, 512.0]
)

_FRAC_MAX_TERMS = 5000


def _log_add(a: float, b: float) -> float:
    lo, hi = min(a, b), max(a, b)
    if lo == -math.inf:
        return hi
    return math.log1p(math.exp(lo - hi)) + hi


def _log_comb(n: float, k: float) -> float:
    return float(special.gammaln(n + 1) - special.gammaln(k + 1) - special.gammaln(n - k + 1))


def _log_erfc(x: float) -> float:
    return math.log(2.0) + float(special.log_ndtr(-x * math.sqrt(2.0)))


def _log_a_int(q: float, sigma: float, alpha: int) -> float:
    log_a = -math.inf
    log_q, log_1mq = math.log(q), math.log1p(-q)
    for i in range(alpha + 1):
        term = _log_comb(alpha, i) + i * log_q + (alpha - i) * log_1mq + (i * i - i) / (2 * sigma ** 2)
        log_a = _log_add(log_a, term)
    return log_a


def _signed_log_add(acc: tuple[int, float], sign: int, mag: float) -> tuple[int, float]:
    """Add ``sign * exp(mag)`` to a ``(sign, log|value|)`` accumulator."""
    s, m = acc
    if mag == -math.inf:
        return acc
    if m == -math.inf:
        return sign, mag
    if s == sign:
        return s, _log_add(m, mag)
    if m > mag:
        return s, m + math.log1p(-math.exp(mag - m))
    if mag > m:
        return sign, mag + math.log1p(-math.exp(m - mag))
    return 1, -math.inf


def _log_a_frac(q: float, sigma: float, alpha: float) -> float:
    # Split the integral at z0 where q*e^x crosses 1-q and expand
    # (1-q+q*e^x)^alpha binomially on each side; erfc weights the half-lines.
    # Generalised binomial coefficients change sign past i > alpha.
    acc0 = acc1 = (1, -math.inf)
    z0 = sigma ** 2 * math.log(1.0 / q - 1.0) + 0.5
    log_q, log_1mq = math.log(q), math.log1p(-q)
    last0 = last1 = -math.inf
    for i in range(_FRAC_MAX_TERMS):
        coef = float(special.binom(alpha, i))
        if coef == 0.0:
            continue
        sign = 1 if coef > 0 else -1
        log_coef = math.log(abs(coef))
        j = alpha - i
        t0 = log_coef + i * log_q + j * log_1mq
        t1 = log_coef + j * log_q + i * log_1mq
        e0 = math.log(0.5) + _log_erfc((i - z0) / (math.sqrt(2) * sigma))
        e1 = math.log(0.5) + _log_erfc((z0 - j) / (math.sqrt(2) * sigma))
        s0 = t0 + (i * i - i) / (2 * sigma ** 2) + e0
        s1 = t1 + (j * j - j) / (2 * sigma ** 2) + e1
        acc0 = _signed_log_add(acc0, sign, s0)
        acc1 = _signed_log_add(acc1, sign, s1)
        total = _signed_log_add(acc0, *acc1)
        if s0 < last0 and s1 < last1 and max(s0, s1) < total[1] - 30:
            if total[0] < 0:
                return math.inf
            return total[1]
        last0, last1 = s0, s1
    return math.inf


def rdp_subsampled_gaussian(q: float, z: float, alpha: float) -> float:
    """RDP at order ``alpha`` of one step of the sampled Gaussian mechanism.

    Returns ``inf`` when ``z == 0`` or when the fractional series does not
    converge (that order is then unusable).
    """
    if not 0 <= q <= 1:
        raise ConfigurationError(f"q must be in [0, 1], got {q}")
    if alpha <= 1:
        raise ConfigurationError(f"order must be > 1, got {alpha}")
    if z < 0:
        raise ConfigurationError(f"noise multiplier must be >= 0, got {z}")
    if q == 0:
        return 0.0
    if z == 0:
        return math.inf
    if q == 1.0:
        return alpha / (2 * z ** 2)
    if float(alpha).is_integer():
        log_a = _log_a_int(q, z, int(alpha))
    else:
        log_a = _log_a_frac(q, z, float(alpha))
    return log_a / (alpha - 1)


def rdp_to_epsilon(orders, rdp, delta: float) -> tuple[float, float]:
    """Smallest epsilon over the order grid and the order achieving it."""
    if not 0 < delta < 1:
        raise ConfigurationError(f"delta must be in (0, 1), got {delta}")
    orders = np.asarray(orders, dtype=np.float64)
    rdp = np.asarray(rdp, dtype=np.float64)
    if orders.size == 0:
        raise ConfigurationError("empty order grid")
    with np.errstate(invalid="ignore", over="ignore"):
        eps = rdp + np.log1p(-1.0 / orders) - (math.log(delta) + np.log(orders)) / (orders - 1)
    eps = np.where(np.isnan(eps), np.inf, eps)
    best = int(np.argmin(eps))
    if not np.isfinite(eps[best]):
        return math.inf, float(orders[best])
    return max(0.0, float(eps[best])), float(orders[best])


@dataclass
class AccountantState:
    q: float
    z: float
    orders: tuple[float, ...] = DEFAULT_ORDERS
    steps: int = 0
    per_step: np.ndarray = field(init=False, repr=False)
    last_order: float | None = field(default=None, init=False)

    def __post_init__(self):
        if not self.orders:
            raise ConfigurationError("empty order grid")
        orders = tuple(float(a) for a in self.orders)
        if any(a <= 1 for a in orders) or any(b <= a for a, b in zip(orders, orders[1:])):
            raise ConfigurationError("orders must be > 1 and strictly increasing")
        self.orders = orders
        self.per_step = np.array([rdp_subsampled_gaussian(self.q, self.z, a) for a in orders])

    @property
    def rdp(self) -> np.ndarray:
        """Cumulative RDP per order after ``steps`` compositions."""
        if self.steps == 0:
            return np.zeros_like(self.per_step)
        return self.steps * self.per_step

    def step(self, count: int = 1) -> None:
        if count < 0:
            raise ConfigurationError("step count must be >= 0")
        self.steps += count

    def epsilon(self, delta: float) -> float:
        return compose_and_convert(self, self.steps, delta)

    def _extend(self, new_orders) -> None:
        merged = sorted(set(self.orders) | {float(a) for a in new_orders})
        self.orders = tuple(merged)
        self.per_step = np.array([rdp_subsampled_gaussian(self.q, self.z, a) for a in merged])


_EXTEND_HIGH = (1024.0, 2048.0, 4096.0, 8192.0)
_EXTEND_LOW = (1.001, 1.002, 1.005, 1.01, 1.02, 1.03, 1.05, 1.07)


def compose_and_convert(state: AccountantState, steps: int, delta: float) -> float:
    """Epsilon after ``steps`` compositions of the state's per-step mechanism.

    When the minimising order sits on the edge of the grid the grid is
    extended once in that direction and a warning is logged. The chosen
    order is stored on ``state.last_order``.
    """
    if steps < 0:
        raise ConfigurationError(f"steps must be >= 0, got {steps}")
    if not state.orders:
        raise ConfigurationError("empty order grid")
    if steps == 0:
        state.last_order = None
        return 0.0
    eps, order = rdp_to_epsilon(state.orders, steps * state.per_step, delta)
    if math.isfinite(eps) and order in (state.orders[0], state.orders[-1]):
        extra = _EXTEND_HIGH if order == state.orders[-1] else _EXTEND_LOW
        log.warning("optimal RDP order %.3g is on the grid edge (q=%g, z=%g, steps=%d); extending grid",
                    order, state.q, state.z, steps)
        state._extend(extra)
        eps, order = rdp_to_epsilon(state.orders, steps * state.per_step, delta)
    state.last_order = order
    return eps


def epsilon_curve(q: float, z: float, T: int, delta: float, orders=DEFAULT_ORDERS) -> list[tuple[int, float]]:
    """Cumulative epsilon after each of rounds 1..T."""
    state = AccountantState(q, z, orders)
    curve = []
    for t in range(1, T + 1):
        curve.append((t, compose_and_convert(state, t, delta)))
    return curve
