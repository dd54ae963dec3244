"""Posterior simulation for the Bayesian CP regression model.

Each factor matrix has a conjugate Gaussian full conditional, so a sweep
redraws ``U^(1), ..., U^(K)`` exactly. The rank is moved by
Metropolis-Hastings birth/death steps that target the joint posterior over
``(d, U)`` with the rank prior ``pi(d) = xi^(d * sum M_k)`` on ``1..d_max``.
Rejection filters are applied when draws are collected, which makes the
running mean a Monte Carlo estimate of the posterior mean conditioned on
the filter.
"""

from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from . import kernels
from .designs import DesignSet
from .errors import (
    ConfigurationError,
    EstimationFailure,
    NumericalError,
    StructuralError,
    ValidationError,
)
from .tensor import (
    CPFactors,
    DenseTensor,
    cp_compose,
    empirical_sq_norm,
    format_factors,
    max2_upper_bound,
    parse_factors,
)

__all__ = [
    "Hyperparams",
    "NoRejection",
    "InfinityNorm",
    "MaxNorm",
    "ChainConfig",
    "SamplerState",
    "PosteriorSummary",
    "ModeConditional",
    "log_likelihood",
    "log_prior",
    "mode_conditional",
    "gibbs_update_mode",
    "rank_move",
    "passes_rejection",
    "init_state",
    "run_chain",
    "merge_summaries",
    "save_checkpoint",
    "load_checkpoint",
]

LOG_2PI = math.log(2.0 * math.pi)
STREAMING_LIMIT = 10**6
DENSE_MEAN_LIMIT = 10**7


@dataclass(frozen=True)
class Hyperparams:
    sigma: float = 1.0
    sigma_p: float = 5.0
    xi: float = 0.5
    d_max: int = 10
    R: Optional[float] = None

    def __post_init__(self):
        if not self.sigma > 0 or not self.sigma_p > 0:
            raise ValidationError("sigma and sigma_p must be positive")
        if not 0 < self.xi < 1:
            raise ValidationError(f"xi must lie in (0, 1), got {self.xi}")
        if int(self.d_max) < 1:
            raise ValidationError(f"d_max must be >= 1, got {self.d_max}")
        if self.R is not None and not self.R > 0:
            raise ValidationError(f"R must be positive, got {self.R}")
        object.__setattr__(self, "d_max", int(self.d_max))


@dataclass(frozen=True)
class NoRejection:
    pass


@dataclass(frozen=True)
class InfinityNorm:
    """Keep draws with ``max |A_{j1..jK}| <= R``."""

    R: float


@dataclass(frozen=True)
class MaxNorm:
    """Keep draws whose every factor column has Euclidean norm ``<= R``."""

    R: float


Rejection = Union[NoRejection, InfinityNorm, MaxNorm]


@dataclass(frozen=True)
class ChainConfig:
    n_samples: int = 1000
    burn_in: Optional[int] = None
    thin: int = 1
    rank_move_prob: float = 0.2
    rejection: Rejection = NoRejection()
    rank_proposal: str = "conditional"
    keep_draws: bool = False
    probe_cells: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.burn_in is None:
            object.__setattr__(self, "burn_in", self.n_samples)
        if self.n_samples < 1 or self.burn_in < 0 or self.thin < 1:
            raise ConfigurationError("need n_samples >= 1, burn_in >= 0 and thin >= 1")
        if not 0.0 <= self.rank_move_prob <= 1.0:
            raise ConfigurationError("rank_move_prob must lie in [0, 1]")


@dataclass
class SamplerState:
    """Current point of a chain. The RNG is owned by the chain."""

    factors: CPFactors
    rng: np.random.Generator
    sweep_count: int = 0
    n_rank_proposed: int = 0
    n_rank_accepted: int = 0
    # cached log densities of ``factors``; None when stale
    _loglik: Optional[float] = field(default=None, repr=False)
    _logprior: Optional[float] = field(default=None, repr=False)

    @property
    def rank(self) -> int:
        return self.factors.rank


@dataclass
class PosteriorSummary:
    mean: Optional[DenseTensor]
    n_kept: int
    n_accepted: int
    n_proposed_rank_moves: int
    n_accepted_rank_moves: int
    rank_histogram: dict
    probe_cells: Optional[np.ndarray] = None
    probe_mean: Optional[np.ndarray] = None
    draw_in_sample_sq: Optional[float] = None
    draws: list = field(default_factory=list)
    final_factors: Optional[CPFactors] = None

    @property
    def rejection_rate(self) -> float:
        return 1.0 - self.n_accepted / self.n_kept if self.n_kept else 0.0

    @property
    def rank_mode(self) -> Optional[int]:
        if not self.rank_histogram:
            return None
        return min(self.rank_histogram, key=lambda d: (-self.rank_histogram[d], d))


def _trusted_factors(mats) -> CPFactors:
    # skips validation for matrices built internally from valid ones
    obj = object.__new__(CPFactors)
    for u in mats:
        u.setflags(write=False)
    object.__setattr__(obj, "factors", tuple(mats))
    return obj


class _Prepared:
    """Per-design arrays reused across sweeps."""

    def __init__(self, design: DesignSet):
        self.design = design
        offsets = np.concatenate(([0], np.cumsum(design.shape.dims)[:-1])).astype(np.int64)
        self.offsets = offsets
        self.gidx = np.ascontiguousarray(design.entry_indices + offsets)
        first = design.ptr[:-1]
        # block-diagonal conditional iff each observation has one mode-k index
        self.block = []
        for k in range(design.shape.order):
            col = design.entry_indices[:, k]
            head = np.repeat(col[first], np.diff(design.ptr)) if design.n else col
            self.block.append(bool(np.all(col == head)))

    @classmethod
    def of(cls, design, prepared=None):
        if prepared is not None and prepared.design is design:
            return prepared
        return cls(design)


def _check_shapes(factors: CPFactors, design: DesignSet):
    if factors.shape != design.shape:
        raise StructuralError(
            f"factors shape {factors.shape.dims} does not match design {design.shape.dims}"
        )


def log_likelihood(factors: CPFactors, design: DesignSet, hp: Hyperparams, prepared=None) -> float:
    """Gaussian log-likelihood including the ``-(n/2) log(2 pi sigma^2)`` term."""
    _check_shapes(factors, design)
    if design.n == 0:
        return 0.0
    prep = _Prepared.of(design, prepared)
    resid = design.y - kernels.predict(factors, design, prep.gidx)
    s2 = hp.sigma**2
    return float(-0.5 * np.dot(resid, resid) / s2 - 0.5 * design.n * (LOG_2PI + math.log(s2)))


def log_prior(factors: CPFactors, hp: Hyperparams) -> float:
    """Normalized Gaussian factor prior plus the unnormalized rank prior.

    Every one of the ``d * sum M_k`` coordinates is ``N(0, sigma_p^2 / d)``.
    """
    d = factors.rank
    if d < 1:
        raise ValidationError("log_prior needs rank >= 1")
    n_coord = d * factors.shape.mode_sum
    prec = d / hp.sigma_p**2
    sq = factors.frobenius_sq_sum()
    return 0.5 * n_coord * (math.log(prec) - LOG_2PI) - 0.5 * prec * sq + n_coord * math.log(hp.xi)


def _normal_logpdf_sum(v: np.ndarray, var: float) -> float:
    return float(-0.5 * v.size * (LOG_2PI + math.log(var)) - 0.5 * np.dot(v, v) / var)


# Gibbs conditionals -----------------------------------------------------------


def _cholesky(prec: np.ndarray) -> np.ndarray:
    """Cholesky factor of one ``(m, m)`` or a stack ``(B, m, m)`` of precisions.

    Failing blocks get up to three retries, each adding
    ``1e-10 * trace / dim`` to the diagonal.
    """
    try:
        return np.linalg.cholesky(prec)
    except np.linalg.LinAlgError:
        pass
    stack = prec[None] if prec.ndim == 2 else prec
    out = np.empty_like(stack)
    for b, blk in enumerate(stack):
        m = blk.shape[0]
        jitter = 1e-10 * np.trace(blk) / m
        cur = blk
        for attempt in range(4):
            try:
                out[b] = np.linalg.cholesky(cur)
                break
            except np.linalg.LinAlgError:
                if attempt == 3:
                    raise NumericalError(
                        "conditional precision is not positive definite after jitter"
                    ) from None
                cur = cur + jitter * np.eye(m)
    return out[0] if prec.ndim == 2 else out


@dataclass
class ModeConditional:
    """Gaussian full conditional of ``vec(U^(k))``.

    ``vec`` stacks columns: coordinate ``(r, j)`` sits at ``j * d + r``.
    With ``block=True`` the precision is stored as ``M_k`` blocks of
    ``d x d``; otherwise as one dense ``(d M_k, d M_k)`` matrix.
    """

    rank: int
    size: int
    block: bool
    precision: np.ndarray
    shift: np.ndarray  # precision @ mean, shape (M_k, d)
    _chol: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def chol(self):
        if self._chol is None:
            self._chol = _cholesky(self.precision)
        return self._chol

    def _solve_lower(self, rhs):
        L = self.chol
        if self.block:
            return np.linalg.solve(L, rhs[..., None])[..., 0]
        return np.linalg.solve(L, rhs.reshape(-1)).reshape(self.size, self.rank)

    def _solve_upper(self, rhs):
        L = self.chol
        if self.block:
            return np.linalg.solve(np.swapaxes(L, 1, 2), rhs[..., None])[..., 0]
        return np.linalg.solve(L.T, rhs.reshape(-1)).reshape(self.size, self.rank)

    def mean(self) -> np.ndarray:
        """Conditional mean as a ``(d, M_k)`` factor matrix."""
        return self._solve_upper(self._solve_lower(self.shift)).T

    def dense_precision(self) -> np.ndarray:
        if not self.block:
            return self.precision
        m = self.rank * self.size
        out = np.zeros((m, m))
        for j in range(self.size):
            sl = slice(j * self.rank, (j + 1) * self.rank)
            out[sl, sl] = self.precision[j]
        return out

    def covariance(self) -> np.ndarray:
        """Dense conditional covariance in ``vec`` order."""
        if self.block:
            inv = np.linalg.inv(self.precision)
            m = self.rank * self.size
            out = np.zeros((m, m))
            for j in range(self.size):
                sl = slice(j * self.rank, (j + 1) * self.rank)
                out[sl, sl] = inv[j]
            return out
        return np.linalg.inv(self.precision)

    def logpdf(self, u: np.ndarray) -> float:
        """Log density at a ``(d, M_k)`` factor matrix."""
        L = self.chol
        log_det = float(np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1))))
        # ||L^T (u - mean)||^2 = u'Pu - 2 u'h + h'P^{-1}h
        v = self._solve_lower(self.shift)
        ut = np.asarray(u).T
        if self.block:
            lt_u = np.einsum("jsr,js->jr", L, ut)
        else:
            lt_u = (L.T @ ut.reshape(-1)).reshape(self.size, self.rank)
        quad = float(np.sum((lt_u - v) ** 2))
        m = self.rank * self.size
        return -0.5 * m * LOG_2PI + log_det - 0.5 * quad

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        z = rng.standard_normal((self.size, self.rank))
        v = self._solve_lower(self.shift)
        return self._solve_upper(v + z).T


def mode_conditional(factors: CPFactors, k: int, design: DesignSet, hp: Hyperparams, prepared=None) -> ModeConditional:
    """Full conditional of ``U^(k)`` given the other factors and the rank.

    Observation ``i`` is linear in ``U^(k)``: ``<X_i, A_U> = <B_i, U^(k)>``
    with ``B_i[r, j]`` summing ``w * prod_{k' != k} U^(k')[r, j_k']`` over
    the entries of ``X_i`` whose mode-``k`` index is ``j``.
    """
    _check_shapes(factors, design)
    if not 0 <= k < factors.order:
        raise StructuralError(f"mode {k} out of range for order {factors.order}")
    prior_prec = factors.rank / hp.sigma_p**2
    return _linear_conditional(factors, k, design, design.y, prior_prec, hp.sigma, prepared)


def _linear_conditional(factors, k, design, y, prior_prec, sigma, prepared=None) -> ModeConditional:
    # Gaussian posterior of U^(k) for responses y under N(0, 1/prior_prec) coordinates
    d, M = factors.rank, factors.shape[k]
    s2 = sigma**2
    if design.n == 0:
        blocks = np.broadcast_to(prior_prec * np.eye(d), (M, d, d)).copy()
        return ModeConditional(d, M, True, blocks, np.zeros((M, d)))
    prep = _Prepared.of(design, prepared)
    cols = factors.packed_columns()
    if prep.block[k]:
        gram, rhs = kernels.mode_gram_raw(
            cols, prep.gidx, design.entry_weights, design.ptr, y,
            k, int(prep.offsets[k]), M,
        )
        prec = gram / s2
        prec += prior_prec * np.eye(d)
        return ModeConditional(d, M, True, prec, rhs / s2)
    prods = kernels.entry_products(cols, prep.gidx, design.entry_weights, k)
    B = np.zeros((design.n, M, d))
    np.add.at(B, (design.entry_obs, design.entry_indices[:, k]), prods)
    B = B.reshape(design.n, M * d)
    prec = B.T @ B / s2 + prior_prec * np.eye(M * d)
    shift = (B.T @ y / s2).reshape(M, d)
    return ModeConditional(d, M, False, prec, shift)


def gibbs_update_mode(state: SamplerState, k: int, design: DesignSet, hp: Hyperparams, prepared=None) -> SamplerState:
    """Replace ``U^(k)`` by an exact draw from its Gaussian full conditional."""
    cond = mode_conditional(state.factors, k, design, hp, prepared)
    mats = list(state.factors.factors)
    mats[k] = np.ascontiguousarray(cond.sample(state.rng))
    state.factors = _trusted_factors(mats)
    state._loglik = state._logprior = None
    return state


# Rank moves -------------------------------------------------------------------


def _log_target(state: SamplerState, design, hp, prep) -> float:
    if state._loglik is None:
        state._loglik = log_likelihood(state.factors, design, hp, prep)
    if state._logprior is None:
        state._logprior = log_prior(state.factors, hp)
    return state._loglik + state._logprior


RANK_PROPOSALS = ("prior", "conditional")


def rank_move(state: SamplerState, design: DesignSet, hp: Hyperparams, prepared=None,
              proposal: str = "conditional") -> SamplerState:
    """One Metropolis-Hastings birth or death step on the rank.

    Birth or death is proposed with probability 1/2 each; proposals leaving
    ``1..d_max`` count as rejected. Components are inserted at, and removed
    from, a uniformly chosen position.

    ``proposal="prior"`` draws the new component from ``N(0, sigma_p^2/(d+1))``
    and shrinks the existing factors by ``sqrt(d/(d+1))`` (death inflates by
    ``sqrt(d/(d-1))``), which leaves the prior exponent of the old
    coordinates unchanged.

    ``proposal="conditional"`` keeps the existing factors as they are, draws
    the new component's rows from the prior except along the largest mode,
    where the row is drawn from its exact Gaussian conditional given the
    residuals. Death evaluates the same density for the removed component.
    """
    if proposal not in RANK_PROPOSALS:
        raise ConfigurationError(f"unknown rank proposal {proposal!r}")
    prep = _Prepared.of(design, prepared) if design.n else None
    rng = state.rng
    d = state.rank
    state.n_rank_proposed += 1
    birth = rng.random() < 0.5
    if (birth and d >= hp.d_max) or (not birth and d <= 1):
        return state
    step = _prior_step if proposal == "prior" else _conditional_step
    mats, log_corr = step(state, design, hp, prep, birth)
    current = _log_target(state, design, hp, prep)
    cand = SamplerState(_trusted_factors(mats), rng)
    log_alpha = _log_target(cand, design, hp, prep) - current + log_corr
    if math.log(rng.random()) < log_alpha:
        state.factors = cand.factors
        state._loglik, state._logprior = cand._loglik, cand._logprior
        state.n_rank_accepted += 1
    return state


def _insert_rows(old, pos, rows, scale=1.0):
    mats = []
    for u, row in zip(old, rows):
        grown = np.empty((u.shape[0] + 1, u.shape[1]))
        grown[:pos] = u[:pos]
        grown[pos + 1 :] = u[pos:]
        if scale != 1.0:
            grown *= scale
        grown[pos] = row
        mats.append(grown)
    return mats


def _prior_step(state, design, hp, prep, birth):
    """Proposal and log correction (Jacobian and proposal densities)."""
    rng, d = state.rng, state.rank
    old = state.factors.factors
    S = state.factors.shape.mode_sum
    if birth:
        var_new = hp.sigma_p**2 / (d + 1)
        fresh = rng.standard_normal(S) * math.sqrt(var_new)
        pos = int(rng.integers(0, d + 1))
        c = math.sqrt(d / (d + 1))
        rows, start = [], 0
        for u in old:
            rows.append(fresh[start : start + u.shape[1]])
            start += u.shape[1]
        return _insert_rows(old, pos, rows, c), d * S * math.log(c) - _normal_logpdf_sum(fresh, var_new)
    pos = int(rng.integers(0, d))
    c = math.sqrt(d / (d - 1))
    removed = np.concatenate([u[pos] for u in old])
    mats = [c * np.delete(u, pos, axis=0) for u in old]
    return mats, (d - 1) * S * math.log(c) + _normal_logpdf_sum(removed, hp.sigma_p**2 / d)


def _fit_mode(shape) -> int:
    return int(np.argmax(shape.dims))


def _component_density(base: CPFactors, rows, design, hp, big_rank, prep):
    """Conditional of the fitted-mode row of one extra component.

    ``rows[k]`` holds the component's other rows; ``base`` the remaining
    components. The extra component is scored at rank ``big_rank``.
    """
    L = _fit_mode(base.shape)
    probe = _trusted_factors([np.asarray(r, dtype=np.float64).reshape(1, -1).copy() for r in rows])
    if design.n:
        resid = design.y - kernels.predict(base, design, prep.gidx)
    else:
        resid = design.y
    return _linear_conditional(probe, L, design, resid, big_rank / hp.sigma_p**2, hp.sigma, prep)


def _conditional_step(state, design, hp, prep, birth):
    rng, d = state.rng, state.rank
    old = state.factors.factors
    shape = state.factors.shape
    L = _fit_mode(shape)
    if birth:
        var_new = hp.sigma_p**2 / (d + 1)
        rows = [rng.standard_normal(m) * math.sqrt(var_new) if k != L else np.zeros(m)
                for k, m in enumerate(shape.dims)]
        cond = _component_density(state.factors, rows, design, hp, d + 1, prep)
        rows[L] = cond.sample(rng)[0]
        log_q = cond.logpdf(rows[L][None, :]) + sum(
            _normal_logpdf_sum(r, var_new) for k, r in enumerate(rows) if k != L
        )
        pos = int(rng.integers(0, d + 1))
        return _insert_rows(old, pos, rows), -log_q
    pos = int(rng.integers(0, d))
    rows = [u[pos].copy() for u in old]
    mats = [np.delete(u, pos, axis=0) for u in old]
    cond = _component_density(_trusted_factors(mats), rows, design, hp, d, prep)
    log_q = cond.logpdf(rows[L][None, :]) + sum(
        _normal_logpdf_sum(r, hp.sigma_p**2 / d) for k, r in enumerate(rows) if k != L
    )
    return mats, log_q


# Rejection filters ---------------------------------------------------------------


def _max_abs_streaming(factors: CPFactors) -> float:
    # one mode-1 slab at a time, never the full tensor
    first, rest = factors.factors[0], factors.factors[1:]
    acc = rest[0].T
    for u in rest[1:]:
        acc = (acc[..., None, :] * u.T).reshape(-1, factors.rank)
    best = 0.0
    for j in range(first.shape[1]):
        best = max(best, float(np.abs(acc @ first[:, j]).max()))
    return best


def infinity_norm(factors: CPFactors) -> float:
    if factors.rank == 0:
        return 0.0
    if factors.shape.size > STREAMING_LIMIT:
        return _max_abs_streaming(factors)
    return float(np.abs(cp_compose(factors).values).max())


def passes_rejection(factors: CPFactors, rejection: Rejection = NoRejection()) -> bool:
    if isinstance(rejection, NoRejection):
        return True
    if isinstance(rejection, InfinityNorm):
        return infinity_norm(factors) <= rejection.R
    if isinstance(rejection, MaxNorm):
        return max2_upper_bound(factors) <= rejection.R
    raise ConfigurationError(f"unknown rejection rule {rejection!r}")


# Chains ------------------------------------------------------------------------


def init_state(shape, hp: Hyperparams, rng: np.random.Generator) -> SamplerState:
    """Rank ``min(2, d_max)`` with factors drawn from the prior."""
    d = min(2, hp.d_max)
    scale = hp.sigma_p / math.sqrt(d)
    mats = [rng.standard_normal((d, m)) * scale for m in shape]
    return SamplerState(_trusted_factors(mats), rng)


def sweep(state: SamplerState, design: DesignSet, hp: Hyperparams, cfg: ChainConfig, prepared=None) -> SamplerState:
    """Gibbs updates over every mode followed by an optional rank move."""
    prep = _Prepared.of(design, prepared)
    for k in range(state.factors.order):
        gibbs_update_mode(state, k, design, hp, prep)
    if cfg.rank_move_prob > 0 and state.rng.random() < cfg.rank_move_prob:
        rank_move(state, design, hp, prep, cfg.rank_proposal)
    state.sweep_count += 1
    return state


def run_chain(
    design: DesignSet,
    hp: Hyperparams,
    cfg: ChainConfig,
    rng: np.random.Generator,
    truth: Optional[DenseTensor] = None,
    state: Optional[SamplerState] = None,
) -> PosteriorSummary:
    """Run burn-in plus ``n_samples * thin`` sweeps and average kept draws.

    Every ``thin``-th post-burn-in state is a kept draw; kept draws passing
    ``cfg.rejection`` enter the running mean. With ``truth`` given, the
    average in-sample squared error of those draws is also recorded.
    """
    if design.n == 0:
        raise ValidationError("run_chain needs a nonempty design")
    shape = design.shape
    probes = None if cfg.probe_cells is None else np.asarray(cfg.probe_cells, dtype=np.int64)
    if shape.size > DENSE_MEAN_LIMIT and probes is None:
        raise ConfigurationError(
            f"tensor has {shape.size} cells; pass probe_cells to accumulate the mean"
        )
    dense = shape.size <= DENSE_MEAN_LIMIT
    if probes is not None:
        probe_design = DesignSet(shape, probes, np.ones(len(probes)), np.arange(len(probes) + 1), np.zeros(len(probes)))
    prep = _Prepared(design)
    if state is None:
        state = init_state(shape, hp, rng)
    else:
        state.rng = rng
    mean = np.zeros(shape.dims) if dense else None
    probe_mean = np.zeros(len(probes)) if probes is not None else None
    hist: Counter = Counter()
    draws = []
    n_kept = n_acc = 0
    err_sum = 0.0
    moves0 = (state.n_rank_proposed, state.n_rank_accepted)
    for it in range(cfg.burn_in + cfg.n_samples * cfg.thin):
        sweep(state, design, hp, cfg, prep)
        if it < cfg.burn_in or (it - cfg.burn_in) % cfg.thin:
            continue
        n_kept += 1
        if not passes_rejection(state.factors, cfg.rejection):
            continue
        n_acc += 1
        hist[state.rank] += 1
        if dense:
            a = cp_compose(state.factors)
            mean += (a.values - mean) / n_acc
            if truth is not None:
                err_sum += empirical_sq_norm(a, truth, design)
        if probes is not None:
            probe_mean += (kernels.predict(state.factors, probe_design) - probe_mean) / n_acc
        if cfg.keep_draws:
            draws.append(state.factors)
    if n_acc == 0:
        raise EstimationFailure(
            f"no draw passed {cfg.rejection} in {n_kept} kept draws; "
            "increase R or the sampling budget"
        )
    return PosteriorSummary(
        mean=DenseTensor(mean) if dense else None,
        n_kept=n_kept,
        n_accepted=n_acc,
        n_proposed_rank_moves=state.n_rank_proposed - moves0[0],
        n_accepted_rank_moves=state.n_rank_accepted - moves0[1],
        rank_histogram=dict(sorted(hist.items())),
        probe_cells=probes,
        probe_mean=probe_mean,
        draw_in_sample_sq=err_sum / n_acc if truth is not None and dense else None,
        draws=draws,
        final_factors=state.factors,
    )


def merge_summaries(summaries) -> PosteriorSummary:
    """Pool independent chains: means weighted by accepted draws, counts summed."""
    summaries = list(summaries)
    if not summaries:
        raise ValidationError("nothing to merge")
    total = sum(s.n_accepted for s in summaries)
    hist: Counter = Counter()
    for s in summaries:
        hist.update(s.rank_histogram)

    def wavg(get):
        vals = [get(s) for s in summaries]
        if any(v is None for v in vals):
            return None
        return sum(v * s.n_accepted for v, s in zip(vals, summaries)) / total

    mean = wavg(lambda s: None if s.mean is None else s.mean.values)
    return PosteriorSummary(
        mean=None if mean is None else DenseTensor(mean),
        n_kept=sum(s.n_kept for s in summaries),
        n_accepted=total,
        n_proposed_rank_moves=sum(s.n_proposed_rank_moves for s in summaries),
        n_accepted_rank_moves=sum(s.n_accepted_rank_moves for s in summaries),
        rank_histogram=dict(sorted(hist.items())),
        probe_cells=summaries[0].probe_cells,
        probe_mean=wavg(lambda s: s.probe_mean),
        draw_in_sample_sq=wavg(lambda s: s.draw_in_sample_sq),
        draws=[f for s in summaries for f in s.draws],
        final_factors=summaries[-1].final_factors,
    )


# Checkpoints -----------------------------------------------------------------------


def rng_token(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True).encode().hex()


def rng_from_token(token: str) -> np.random.Generator:
    state = json.loads(bytes.fromhex(token).decode())
    bitgen = getattr(np.random, state["bit_generator"])()
    bitgen.state = state
    return np.random.Generator(bitgen)


def save_checkpoint(path, state: SamplerState, hp: Hyperparams) -> None:
    lines = [
        f"sigma={hp.sigma!r}",
        f"sigma_p={hp.sigma_p!r}",
        f"xi={hp.xi!r}",
        f"d_max={hp.d_max}",
        f"R={'' if hp.R is None else repr(hp.R)}",
        f"sweep_count={state.sweep_count}",
        f"rng={rng_token(state.rng)}",
        "factors:",
    ]
    Path(path).write_text("\n".join(lines) + "\n" + format_factors(state.factors))


def load_checkpoint(path):
    """Inverse of :func:`save_checkpoint`; returns ``(state, hyperparams)``."""
    head, _, body = Path(path).read_text().partition("factors:\n")
    kv = dict(line.split("=", 1) for line in head.splitlines() if line.strip())
    hp = Hyperparams(
        sigma=float(kv["sigma"]),
        sigma_p=float(kv["sigma_p"]),
        xi=float(kv["xi"]),
        d_max=int(kv["d_max"]),
        R=float(kv["R"]) if kv["R"] else None,
    )
    state = SamplerState(parse_factors(body), rng_from_token(kv["rng"]), int(kv["sweep_count"]))
    return state, hp
