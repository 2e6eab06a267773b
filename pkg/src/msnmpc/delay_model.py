"""Delay statistics: sliding buffer, Gamma moment fit, Gamma CDF and branch weights."""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from .dynamics import DomainError

SIGMA_FLOOR = 1e-4
DEFAULT_N_MAX = 200
TAIL_POLICIES = ("renormalize", "last_branch")


class FitDegenerateError(ValueError):
    """The delay window cannot support a moment fit."""


class DelayBuffer:
    """Fixed-capacity FIFO of observed delays in seconds."""

    def __init__(self, n_max: int = DEFAULT_N_MAX, values=()):
        if int(n_max) < 1:
            raise DomainError("n_max must be a positive integer")
        self.n_max = int(n_max)
        self._window = deque(maxlen=self.n_max)
        for v in values:
            self.push(v)

    def push(self, delay: float) -> None:
        delay = float(delay)
        if not (math.isfinite(delay) and delay >= 0):
            raise DomainError(f"delay must be finite and non-negative, got {delay}")
        self._window.append(delay)

    def snapshot(self) -> np.ndarray:
        return np.fromiter(self._window, dtype=float, count=len(self._window))

    def __len__(self) -> int:
        return len(self._window)

    def __iter__(self):
        return iter(self._window)


@dataclass(frozen=True)
class GammaParams:
    alpha: float
    beta: float

    def __post_init__(self):
        ok = all(math.isfinite(v) and v > 0 for v in (self.alpha, self.beta))
        if not ok:
            raise DomainError("Gamma shape and scale must be finite and positive")

    @property
    def mean(self) -> float:
        return self.alpha * self.beta

    @property
    def variance(self) -> float:
        return self.alpha * self.beta**2


@dataclass(frozen=True)
class ScenarioSet:
    sampling_times: tuple
    weights: tuple

    def __post_init__(self):
        ts = tuple(float(t) for t in self.sampling_times)
        w = tuple(float(v) for v in self.weights)
        check_sampling_times(ts)
        if len(w) != len(ts):
            raise DomainError("one weight per sampling time is required")
        if min(w) < 0 or abs(sum(w) - 1.0) > 1e-9:
            raise DomainError("weights must be non-negative and sum to one")
        object.__setattr__(self, "sampling_times", ts)
        object.__setattr__(self, "weights", w)

    @property
    def size(self) -> int:
        return len(self.sampling_times)

    @classmethod
    def uniform(cls, sampling_times) -> "ScenarioSet":
        m = len(sampling_times)
        return cls(tuple(sampling_times), tuple([1.0 / m] * m))


def check_sampling_times(times) -> None:
    if len(times) < 1:
        raise DomainError("at least one sampling time is required")
    if any(not (math.isfinite(t) and t > 0) for t in times):
        raise DomainError("sampling times must be positive")
    if any(b <= a for a, b in zip(times, times[1:])):
        raise DomainError("sampling times must be strictly increasing")


def fit_gamma(buffer) -> GammaParams:
    """Moment fit ``alpha = mu^2/sigma^2``, ``beta = sigma^2/mu`` (unbiased variance)."""
    data = buffer.snapshot() if isinstance(buffer, DelayBuffer) else np.asarray(buffer, float)
    if data.size < 2:
        raise FitDegenerateError("need at least two delay samples")
    mu = float(np.mean(data))
    var = float(np.var(data, ddof=1))
    if math.sqrt(var) < SIGMA_FLOOR or mu <= 0:
        raise FitDegenerateError(f"delay spread {math.sqrt(var):.3g} s below floor")
    return GammaParams(mu * mu / var, var / mu)


def _log_prefactor(a: float, x: float) -> float:
    return -x + a * math.log(x) - math.lgamma(a)


def _lower_series(a: float, x: float, eps: float = 1e-16, max_iter: int = 10_000) -> float:
    ap = a
    term = 1.0 / a
    total = term
    for _ in range(max_iter):
        ap += 1.0
        term *= x / ap
        total += term
        if abs(term) < abs(total) * eps:
            break
    return total * math.exp(_log_prefactor(a, x))


def _upper_continued_fraction(a: float, x: float, eps: float = 1e-16, max_iter: int = 10_000) -> float:
    # modified Lentz evaluation of the upper incomplete gamma continued fraction
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, max_iter + 1):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        if abs(d) < tiny:
            d = tiny
        c = b + an / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        step = d * c
        h *= step
        if abs(step - 1.0) < eps:
            break
    return math.exp(_log_prefactor(a, x)) * h


def regularized_lower_gamma(a: float, x: float) -> float:
    """P(a, x), the regularized lower incomplete Gamma function."""
    if not a > 0:
        raise DomainError("shape must be positive")
    if x < 0:
        raise DomainError("argument must be non-negative")
    if x == 0:
        return 0.0
    if math.isinf(x):
        return 1.0
    if x < a + 1.0:
        return min(1.0, _lower_series(a, x))
    return max(0.0, 1.0 - _upper_continued_fraction(a, x))


def gamma_cdf(t_d: float, params: GammaParams) -> float:
    """Probability that a Gamma(alpha, beta) delay falls in ``[0, t_d]``."""
    if not t_d >= 0:
        raise DomainError("delay must be non-negative")
    return regularized_lower_gamma(params.alpha, t_d / params.beta)


def raw_scenario_weights(params: GammaParams, sampling_times) -> np.ndarray:
    """Consecutive CDF differences at the branch sampling times (not normalized)."""
    times = [float(t) for t in sampling_times]
    check_sampling_times(times)
    cdf = np.array([gamma_cdf(t, params) for t in times])
    return np.diff(cdf, prepend=0.0)


def scenario_weights(params: GammaParams, sampling_times, tail_policy: str = "renormalize") -> np.ndarray:
    """Normalized branch weights.

    ``renormalize`` rescales the raw weights to sum to one; ``last_branch``
    gives the tail mass above the largest sampling time to the last branch.
    If every raw weight is zero (all mass beyond the tree) the last branch
    takes all the weight.
    """
    if tail_policy not in TAIL_POLICIES:
        raise DomainError(f"unknown tail policy {tail_policy!r}")
    raw = raw_scenario_weights(params, sampling_times)
    total = raw.sum()
    if tail_policy == "last_branch" or total <= 0:
        w = raw.copy()
        w[-1] += 1.0 - total
        return w / w.sum()
    return raw / total


def sample_delay(rng: np.random.Generator, params: GammaParams) -> float:
    return float(rng.gamma(params.alpha, params.beta))
