"""Finite-statistics primitives used throughout the estimation chain.

Two multiplicative Chernoff-style interval maps (observed-from-expected and
expected-from-observed), the random-sampling correction that links a measured
error rate to a phase-error rate, and the binary entropy function.  Counts are
treated as reals: the estimators are routinely applied to expected values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = [
    "FailureBudget",
    "BoundedValue",
    "binary_entropy",
    "chernoff_observed",
    "chernoff_expected",
    "sampling_correction",
]

# Error rates are clamped into this open interval before the log in
# sampling_correction; the protocol can legitimately observe zero errors.
RATE_FLOOR = 1e-12


def binary_entropy(x: float) -> float:
    """Binary Shannon entropy in bits, with 0*log2(0) taken as 0."""
    if not 0.0 <= x <= 1.0:
        raise ValueError(f"binary_entropy needs x in [0, 1], got {x!r}")
    if x == 0.0 or x == 1.0:
        return 0.0
    return -x * math.log2(x) - (1.0 - x) * math.log2(1.0 - x)


@dataclass(frozen=True)
class FailureBudget:
    """A failure probability and its log-inverse exponent."""

    eps: float

    def __post_init__(self) -> None:
        if not 0.0 < self.eps < 1.0:
            raise ValueError(f"failure probability must be in (0, 1), got {self.eps!r}")

    @property
    def beta(self) -> float:
        return math.log(1.0 / self.eps)


@dataclass(frozen=True)
class BoundedValue:
    """Interval around a count.

    ``central`` is the value the interval was built from; ``role`` records
    whether it is an expected or an observed count so the two Chernoff
    directions cannot be silently mixed up.
    """

    lower: float
    central: float
    upper: float
    eps: float
    role: str = "expected"  # "expected" | "observed"

    def __post_init__(self) -> None:
        if not 0.0 <= self.lower <= self.central <= self.upper:
            raise ValueError(
                f"bounds out of order: {self.lower!r} <= {self.central!r} <= {self.upper!r} fails"
            )


def chernoff_observed(expected: float, eps: float) -> BoundedValue:
    """Interval containing the observed count given its expected value.

    With probability at least 1 - 2*eps a draw with mean ``expected`` lands in
    [lower, upper].
    """
    if expected < 0.0:
        raise ValueError(f"expected count must be >= 0, got {expected!r}")
    beta = FailureBudget(eps).beta
    upper = expected + beta / 2.0 + math.sqrt(2.0 * beta * expected + beta * beta / 4.0)
    lower = max(expected - math.sqrt(2.0 * beta * expected), 0.0)
    return BoundedValue(lower, expected, upper, eps, role="expected")


def chernoff_expected(observed: float, eps: float) -> BoundedValue:
    """Interval containing the expected value given an observed count."""
    if observed < 0.0:
        raise ValueError(f"observed count must be >= 0, got {observed!r}")
    beta = FailureBudget(eps).beta
    upper = observed + beta + math.sqrt(2.0 * beta * observed + beta * beta)
    lower = max(observed - beta / 2.0 - math.sqrt(2.0 * beta * observed + beta * beta / 4.0), 0.0)
    return BoundedValue(lower, observed, upper, eps, role="observed")


def sampling_correction(n: float, k: float, rate: float, eps: float) -> float:
    """Upper deviation of a rate under random sampling without replacement.

    Given ``n`` kept events, ``k`` test events and an error rate ``rate``
    measured on the test events, returns the amount by which the unobserved
    rate on the kept events can exceed ``rate`` except with probability
    ``eps``.  Vanishes as n, k grow at fixed rate.
    """
    if n <= 0.0 or k <= 0.0:
        raise ValueError(f"sample sizes must be positive, got n={n!r}, k={k!r}")
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate!r}")
    if not 0.0 < eps < 1.0:
        raise ValueError(f"failure probability must be in (0, 1), got {eps!r}")
    lam = min(max(rate, RATE_FLOOR), 1.0 - RATE_FLOOR)
    total = n + k
    a_max = max(n, k)
    g = (total / (n * k)) * math.log(total / (2.0 * math.pi * n * k * lam * (1.0 - lam) * eps * eps))
    if g < 0.0:
        # Statistics so large that the log went negative: no correction needed.
        return 0.0
    ag = a_max * g / total
    num = (1.0 - 2.0 * lam) * ag + math.sqrt(ag * ag + 4.0 * lam * (1.0 - lam) * g)
    den = 2.0 + 2.0 * a_max * ag / total
    return num / den
