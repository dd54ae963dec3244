"""Computable rate quantities for the Bayesian CP estimator.

The prior-mass exponent ``Xi`` is evaluated through its closed-form upper
bound; the three risk bounds are reported with their universal constant set
to one, so they describe the *shape* of each rate rather than certified
values. The auxiliary inequalities (chi-square tails, Gaussian small-ball
probability, the tail-integral identity) are exposed for numerical checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DegenerateProfileError, DomainError, ValidationError
from .sampler import Hyperparams

__all__ = [
    "ProblemProfile",
    "BoundReport",
    "xi_upper_bound",
    "constants",
    "rate_bounds",
    "simplified_in_sample_rate",
    "chi2_tail_bounds",
    "chi2_shifted_tail_bound",
    "small_ball_lower_bound",
    "tail_integral_closed_form",
    "hoelder_product_terms",
]


@dataclass(frozen=True)
class ProblemProfile:
    """Sizes and truth summaries entering the bounds.

    ``frob_sq_sum`` is ``sum_k ||U*^(k)||_F^2`` and ``max2`` the max-norm of
    the truth (or the factor-level upper bound of a known decomposition).
    """

    dims: tuple
    n: int
    d_star: int
    frob_sq_sum: float
    max2: float
    hp: Hyperparams

    def __post_init__(self):
        dims = tuple(int(m) for m in self.dims)
        object.__setattr__(self, "dims", dims)
        if len(dims) < 2 or min(dims) < 1 or self.n < 1 or self.d_star < 1:
            raise ValidationError("profile needs K >= 2, positive sizes, n >= 1 and d* >= 1")
        if self.frob_sq_sum < 0 or self.max2 < 0:
            raise ValidationError("norm summaries must be non-negative")
        if self.d_star > self.hp.d_max:
            raise ValidationError(f"d* = {self.d_star} exceeds d_max = {self.hp.d_max}")

    @property
    def K(self) -> int:
        return len(self.dims)

    @property
    def mode_sum(self) -> int:
        return sum(self.dims)

    @classmethod
    def from_truth(cls, truth, n: int, hp: Hyperparams) -> "ProblemProfile":
        """Profile of a synthetic truth given by its generating factors."""
        from .tensor import max2_upper_bound

        return cls(truth.shape.dims, n, truth.rank, truth.frobenius_sq_sum(), max2_upper_bound(truth), hp)


@dataclass
class BoundReport:
    profile: ProblemProfile
    c_nk: float
    c_eps: float
    xi_unit: float
    xi_eps: float
    t1_bound: float
    t2_bound: Optional[float] = None
    t3_bound: Optional[float] = None
    c_nk_maxnorm: Optional[float] = None
    xi_at: dict = field(default_factory=dict)

    def as_row(self) -> dict:
        p = self.profile
        return {
            "dims": "x".join(str(m) for m in p.dims),
            "n": p.n,
            "d_star": p.d_star,
            "sigma_p": p.hp.sigma_p,
            "xi": p.hp.xi,
            "d_max": p.hp.d_max,
            "R": "" if p.hp.R is None else p.hp.R,
            "frob_sq_sum": p.frob_sq_sum,
            "max2": p.max2,
            "Xi_unit": self.xi_unit,
            "Xi_eps": self.xi_eps,
            "C_nK": self.c_nk,
            "c_eps": self.c_eps,
            "t1": self.t1_bound,
            "t2": "" if self.t2_bound is None else self.t2_bound,
            "t3": "" if self.t3_bound is None else self.t3_bound,
        }


def xi_upper_bound(profile: ProblemProfile, r: float) -> float:
    """Upper bound on ``Xi(r / sqrt(n))``, the negative log prior mass of the
    in-sample ``r/sqrt(n)``-ball around the truth."""
    if not r > 0:
        raise DomainError(f"radius must be positive, got {r}")
    hp, K = profile.hp, profile.K
    sp = hp.sigma_p
    spread = math.sqrt(profile.n) * sp**K * K * (profile.max2 / sp + 1.0) ** (K - 1) / r
    return (
        profile.d_star * profile.mode_sum * math.log(6.0 / hp.xi * max(spread, 1.0))
        + profile.d_star * profile.frob_sq_sum / (2.0 * sp**2)
    )


def constants(profile: ProblemProfile) -> tuple:
    """``(C_nK, c_eps)`` with ``Xi(1/sqrt(n))`` replaced by its upper bound."""
    K = profile.K
    xi1 = xi_upper_bound(profile, 1.0)
    c_nk = 3.0 * K * math.sqrt(profile.n) * (4.0 * profile.hp.sigma_p**2 * xi1 / profile.d_star) ** (K / 2)
    if not c_nk > 1.0:
        raise DegenerateProfileError(f"C_nK = {c_nk} <= 1 makes log(C_nK) non-positive")
    c_eps = min(abs(math.log(profile.hp.xi)) / math.log(c_nk), 1.0) / 4.0
    return c_nk, c_eps


def _tail_constant(K: int) -> float:
    return 8.0**K * math.factorial(K + 1)


def rate_bounds(profile: ProblemProfile, radii: Sequence[float] = (), require_R: bool = False) -> BoundReport:
    """Evaluate the in-sample and both out-of-sample rate expressions.

    The out-of-sample bounds need ``profile.hp.R``; without it they are left
    as ``None`` (or a :class:`ConfigurationError` when ``require_R``).
    """
    hp, K, n = profile.hp, profile.K, profile.n
    c_nk, c_eps = constants(profile)
    log_xi = abs(math.log(hp.xi))
    xi_unit = xi_upper_bound(profile, 1.0)
    xi_eps = xi_upper_bound(profile, math.sqrt(c_eps))
    ds = profile.d_star
    tail = _tail_constant(K)
    t1 = (
        ds * (profile.mode_sum + 1.0 / log_xi) * math.log(c_nk)
        + xi_eps / c_eps
        + math.log(hp.d_max)
        + K
        + tail
    ) / n
    report = BoundReport(profile, c_nk, c_eps, xi_unit, xi_eps, t1)
    report.xi_at = {float(r): xi_upper_bound(profile, r) for r in radii}
    if hp.R is None:
        if require_R:
            raise ConfigurationError("the out-of-sample bounds need a rejection radius R")
        return report
    R = hp.R
    report.t2_bound = (
        max(R**2, 1.0)
        / n
        * (
            ds * (profile.mode_sum + 3.0 / log_xi) * math.log(c_nk)
            + xi_eps / c_eps
            + math.log(hp.d_max)
            + tail
        )
    )
    report.c_nk_maxnorm = 3.0 * K * math.sqrt(n) * R ** (K / 2)
    log_term = math.log(K * math.sqrt(n) * R ** (K / 2) * hp.sigma_p**K / hp.xi)
    report.t3_bound = ds * profile.mode_sum / n * max(1.0, R ** (2 * K)) * log_term
    return report


def simplified_in_sample_rate(profile: ProblemProfile) -> float:
    """Dominant-term form ``d* sum M_k / n * log(K sqrt(n (sum M_k)^K) sigma_p^K / xi)``."""
    hp, K, S = profile.hp, profile.K, profile.mode_sum
    inner = K * math.sqrt(profile.n * S**K) * hp.sigma_p**K / hp.xi
    return profile.d_star * S / profile.n * math.log(inner)


# Auxiliary inequalities -------------------------------------------------------


def chi2_shifted_tail_bound(k: int, x: float) -> tuple:
    """``(threshold, bound)`` with ``P(chi2_k >= threshold) <= bound`` for any ``x > 0``.

    ``threshold = k + 2 sqrt(x k) + 2 x`` and ``bound = exp(-x)``.
    """
    if k < 1 or not x > 0:
        raise DomainError(f"need k >= 1 and x > 0, got k={k}, x={x}")
    return k + 2.0 * math.sqrt(x * k) + 2.0 * x, math.exp(-x)


def chi2_tail_bounds(k: int, x: float) -> tuple:
    """Both chi-square tail bounds with ``k`` degrees of freedom.

    Returns ``(b1, b2)``: ``b1 = exp(-x)`` bounds
    ``P(chi2_k >= k + 2 sqrt(x k) + 2 x)`` and
    ``b2 = exp(k/2 + (k/2) log(x/k) - x/2)`` bounds ``P(chi2_k >= x)``.
    The second needs ``x >= k``; use :func:`chi2_shifted_tail_bound` for
    the first alone when ``x < k``.
    """
    _, b1 = chi2_shifted_tail_bound(k, x)
    if x < k:
        raise DomainError(f"second tail bound needs x >= k, got x={x}, k={k}")
    b2 = math.exp(k / 2 + (k / 2) * math.log(x / k) - x / 2)
    return b1, b2


def small_ball_lower_bound(d: int, sigma: float, eps: float) -> float:
    """Lower bound ``(eps / (3 sigma sqrt(d)))^d`` on ``P(||g|| <= eps)`` for
    ``g ~ N(0, sigma^2 I_d)``, valid when ``0 < eps <= sigma sqrt(d)``."""
    if d < 1 or not sigma > 0:
        raise DomainError("need d >= 1 and sigma > 0")
    if not 0 < eps <= sigma * math.sqrt(d):
        raise DomainError(f"eps must lie in (0, sigma sqrt(d)] = (0, {sigma * math.sqrt(d)}]")
    return (eps / (3.0 * sigma * math.sqrt(d))) ** d


def tail_integral_closed_form(a: float, c: float, K: int) -> float:
    """Closed form of ``int_a^inf x exp(-c x^(2/K)) dx``."""
    if not (a > 0 and c > 0) or K < 1:
        raise DomainError("need a > 0, c > 0 and K >= 1")
    t = a ** (2.0 / K)
    total, falling = 0.0, 1.0
    for i in range(1, K + 1):
        falling *= K - i + 1
        total += falling / c**i * a ** ((K - i) * 2.0 / K)
    return 0.5 * total * math.exp(-c * t)


def hoelder_product_terms(vectors) -> tuple:
    """``(|sum_i prod_k u_i^(k)|, prod_k ||u^(k)||_K, prod_k ||u^(k)||_2)``.

    For ``K >= 2`` vectors of equal length the three values are
    non-decreasing left to right.
    """
    us = [np.asarray(u, dtype=np.float64).ravel() for u in vectors]
    K = len(us)
    if K < 1 or len({u.size for u in us}) != 1:
        raise DomainError("need K >= 1 vectors of equal length")
    lhs = abs(float(np.sum(np.prod(np.vstack(us), axis=0))))
    rhs_k = math.prod(float(np.sum(np.abs(u) ** K) ** (1.0 / K)) for u in us)
    rhs_2 = math.prod(float(np.linalg.norm(u)) for u in us)
    return lhs, rhs_k, rhs_2
