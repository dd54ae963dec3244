"""Synthetic tensor-completion experiments and their accuracy metrics."""

from __future__ import annotations

import math
import time
from collections import Counter
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .designs import DesignSet, NoiseSpec, completion_data
from .errors import BayesTensorError, ValidationError
from .sampler import ChainConfig, Hyperparams, InfinityNorm, run_chain
from .tensor import CPFactors, DenseTensor, cp_compose, empirical_sq_norm, population_sq_norm_uniform

RESULT_COLUMNS = [
    "setting", "ns", "rep", "n", "in_sample", "out_sample",
    "scaled_in", "scaled_out", "rank_mode", "wall_s", "error",
]

DEFAULT_NS = (0.3, 0.5, 0.7, 0.9)


@dataclass(frozen=True)
class ExperimentSetting:
    id: int
    dims: tuple
    d_star: int
    sigma_p: float = 5.0
    R: float = 10.0
    noise: float = 1.0
    xi: float = 0.5

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def dof(self) -> int:
        return self.d_star * sum(self.dims)

    @property
    def scale_factor(self) -> float:
        """Multiplier turning a raw accuracy into the scaled accuracy."""
        return self.size / self.dof

    def n_for(self, ns: float) -> int:
        n = int(round(ns * self.size))
        if n < 1:
            raise ValidationError(f"n_s = {ns} gives no observations for dims {self.dims}")
        return n

    def scaled(self, scale: float) -> "ExperimentSetting":
        """Shrink every mode and the rank by ``scale``, rounding up."""
        if scale == 1.0:
            return self
        dims = tuple(max(1, math.ceil(m * scale)) for m in self.dims)
        return ExperimentSetting(self.id, dims, max(1, math.ceil(self.d_star * scale)),
                                 self.sigma_p, self.R, self.noise, self.xi)

    def hyperparams(self, d_max: Optional[int] = None, xi: Optional[float] = None) -> Hyperparams:
        return Hyperparams(sigma=self.noise, sigma_p=self.sigma_p, xi=xi or self.xi,
                           d_max=d_max or 2 * self.d_star, R=self.R)


SETTINGS = {
    1: ExperimentSetting(1, (10, 10, 10), 4),
    2: ExperimentSetting(2, (10, 10, 40), 5),
    3: ExperimentSetting(3, (20, 20, 30), 8),
    4: ExperimentSetting(4, (20, 30, 40), 5),
    5: ExperimentSetting(5, (30, 30, 40), 6),
}


@dataclass
class AccuracyRecord:
    setting: int
    ns: float
    rep: object
    n: int
    in_sample: float = float("nan")
    out_sample: float = float("nan")
    scaled_in: float = float("nan")
    scaled_out: float = float("nan")
    rank_mode: Optional[int] = None
    wall_s: Optional[float] = None
    error: str = ""

    def as_row(self, timing: bool = True) -> list:
        def num(v):
            return "" if v is None or (isinstance(v, float) and math.isnan(v)) else repr(float(v))

        return [
            self.setting, repr(float(self.ns)), self.rep, self.n,
            num(self.in_sample), num(self.out_sample), num(self.scaled_in), num(self.scaled_out),
            "" if self.rank_mode is None else self.rank_mode,
            num(round(self.wall_s, 3)) if timing and self.wall_s is not None else "",
            self.error,
        ]


def random_truth(dims: Sequence[int], d_star: int, rng: np.random.Generator) -> CPFactors:
    """Factors with i.i.d. ``Uniform[-1, 1]`` entries."""
    return CPFactors(tuple(rng.uniform(-1.0, 1.0, size=(d_star, m)) for m in dims))


def accuracy(mean: DenseTensor, truth: DenseTensor, design: DesignSet, d_star: int) -> dict:
    """Raw and scaled in-sample / out-of-sample squared errors."""
    shape = truth.shape
    factor = shape.size / (d_star * shape.mode_sum)
    ins = empirical_sq_norm(mean, truth, design)
    outs = population_sq_norm_uniform(mean, truth)
    return {"in_sample": ins, "out_sample": outs, "scaled_in": ins * factor, "scaled_out": outs * factor}


def cell_seeds(master: int, setting: int, ns: float, rep: int):
    """Independent data and chain streams for one experiment cell."""
    ss = np.random.SeedSequence([int(master), int(setting), int(round(ns * 1000)), int(rep)])
    data_ss, chain_ss = ss.spawn(2)
    return np.random.default_rng(data_ss), np.random.default_rng(chain_ss)


@dataclass(frozen=True)
class Budget:
    n_samples: int = 500
    burn_in: Optional[int] = None
    thin: int = 1
    rank_move_prob: float = 0.2
    d_max: Optional[int] = None
    xi: Optional[float] = None


def run_cell(setting: ExperimentSetting, ns: float, rep: int, seed: int, budget: Budget) -> AccuracyRecord:
    """Generate, fit and evaluate one (setting, n_s, repetition) cell."""
    n = setting.n_for(ns)
    rec = AccuracyRecord(setting.id, ns, rep, n)
    t0 = time.perf_counter()
    try:
        data_rng, chain_rng = cell_seeds(seed, setting.id, ns, rep)
        truth_f = random_truth(setting.dims, setting.d_star, data_rng)
        design = completion_data(truth_f, n, NoiseSpec(setting.noise), data_rng)
        hp = setting.hyperparams(budget.d_max, budget.xi)
        cfg = ChainConfig(
            n_samples=budget.n_samples, burn_in=budget.burn_in, thin=budget.thin,
            rank_move_prob=budget.rank_move_prob, rejection=InfinityNorm(setting.R),
        )
        summary = run_chain(design, hp, cfg, chain_rng)
        metrics = accuracy(summary.mean, cp_compose(truth_f), design, setting.d_star)
        for key, val in metrics.items():
            setattr(rec, key, val)
        rec.rank_mode = summary.rank_mode
    except BayesTensorError as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    rec.wall_s = time.perf_counter() - t0
    return rec


def average_records(records: Sequence[AccuracyRecord]) -> list:
    """One arithmetic-mean row per (setting, n_s), over successful repetitions."""
    groups: dict = {}
    for r in records:
        groups.setdefault((r.setting, r.ns), []).append(r)
    out = []
    for (sid, ns), rows in groups.items():
        ok = [r for r in rows if not r.error]
        avg = AccuracyRecord(sid, ns, "avg", rows[0].n)
        if ok:
            for key in ("in_sample", "out_sample", "scaled_in", "scaled_out"):
                setattr(avg, key, float(np.mean([getattr(r, key) for r in ok])))
            modes = Counter(r.rank_mode for r in ok)
            avg.rank_mode = min(modes, key=lambda d: (-modes[d], d))
        else:
            avg.error = "all repetitions failed"
        avg.wall_s = float(sum(r.wall_s or 0.0 for r in rows))
        out.append(avg)
    return out


def _run_cell_args(args):
    return run_cell(*args)


def run_experiment(
    setting_ids: Sequence[int],
    ns_grid: Sequence[float] = DEFAULT_NS,
    reps: int = 3,
    seed: int = 0,
    budget: Budget = Budget(),
    scale: float = 1.0,
    workers: int = 1,
):
    """Full cross product of settings, sample ratios and repetitions.

    Returns ``(detail_records, average_records)`` in deterministic order.
    """
    jobs = []
    for sid in setting_ids:
        setting = SETTINGS[int(sid)].scaled(scale)
        for ns in ns_grid:
            for rep in range(reps):
                jobs.append((setting, float(ns), rep, seed, budget))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            detail = list(pool.map(_run_cell_args, jobs))
    else:
        detail = [run_cell(*job) for job in jobs]
    return detail, average_records(detail)
