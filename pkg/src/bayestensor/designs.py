"""Measurement designs, response generation and the l1 normalization gate."""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import StructuralError, ValidationError
from .tensor import CPFactors, DenseTensor, Shape, as_shape

__all__ = [
    "DesignKind",
    "GatePolicy",
    "SparseMeasurement",
    "Observation",
    "DesignSet",
    "NoiseSpec",
    "make_completion_design",
    "make_multitask_design",
    "normalize_l1_gate",
    "generate_responses",
    "read_observations",
    "write_observations",
]

L1_TOL = 1e-12


class DesignKind(str, enum.Enum):
    ELEMENT_INDICATOR = "ElementIndicator"
    TASK_SLICE = "TaskSlice"
    GENERIC_SPARSE = "GenericSparse"


class GatePolicy(str, enum.Enum):
    REJECT = "reject"
    RESCALE = "rescale"


@dataclass(frozen=True, eq=False)
class SparseMeasurement:
    """Sparse measurement tensor ``X`` stored as (multi-index, weight) pairs.

    Duplicate indices are merged by summing their weights. ``scale`` records
    the factor applied by :func:`normalize_l1_gate` so callers can co-scale
    the matching response.
    """

    shape: Shape
    indices: np.ndarray
    weights: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        shape = as_shape(self.shape)
        idx = np.asarray(self.indices, dtype=np.int64).reshape(-1, shape.order)
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if idx.shape[0] != w.shape[0]:
            raise StructuralError("indices and weights differ in length")
        if np.any(idx < 0) or np.any(idx >= np.asarray(shape.dims)):
            raise StructuralError(f"measurement index out of range for shape {shape.dims}")
        if not np.all(np.isfinite(w)):
            raise ValidationError("measurement weights must be finite")
        if idx.shape[0] > 1:
            flat = np.ravel_multi_index(tuple(idx.T), shape.dims)
            uniq, inverse = np.unique(flat, return_inverse=True)
            if uniq.size < flat.size:
                w = np.bincount(inverse, weights=w, minlength=uniq.size)
                idx = np.stack(np.unravel_index(uniq, shape.dims), axis=1).astype(np.int64)
        idx.setflags(write=False)
        w.setflags(write=False)
        object.__setattr__(self, "shape", shape)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", w)

    @classmethod
    def indicator(cls, shape, index: Sequence[int], weight: float = 1.0):
        return cls(shape, np.asarray([index]), np.asarray([weight]))

    @property
    def l1(self) -> float:
        return float(np.abs(self.weights).sum())

    def to_dense(self) -> DenseTensor:
        out = np.zeros(self.shape.dims)
        out[tuple(self.indices.T)] = self.weights
        return DenseTensor(out)


@dataclass(frozen=True, eq=False)
class Observation:
    x: SparseMeasurement
    y: float

    def __post_init__(self):
        if not np.isfinite(self.y):
            raise ValidationError(f"response must be finite, got {self.y}")


@dataclass(frozen=True)
class NoiseSpec:
    sigma: float = 1.0

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValidationError(f"noise sigma must be > 0, got {self.sigma}")


@dataclass(frozen=True, eq=False)
class DesignSet:
    """The data set ``{(Y_i, X_i)}`` in compressed sparse row form.

    Entry ``e`` belongs to observation ``entry_obs[e]``; the entries of
    observation ``i`` are ``ptr[i]:ptr[i+1]``. Every measurement satisfies
    ``||X_i||_1 <= 1`` (within ``1e-12``).
    """

    shape: Shape
    entry_indices: np.ndarray
    entry_weights: np.ndarray
    ptr: np.ndarray
    y: np.ndarray
    kind: DesignKind = DesignKind.GENERIC_SPARSE
    entry_obs: np.ndarray = field(init=False, repr=False)
    flat_cells: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        shape = as_shape(self.shape)
        idx = np.ascontiguousarray(self.entry_indices, dtype=np.int64).reshape(-1, shape.order)
        w = np.ascontiguousarray(self.entry_weights, dtype=np.float64).reshape(-1)
        ptr = np.ascontiguousarray(self.ptr, dtype=np.int64).reshape(-1)
        y = np.ascontiguousarray(self.y, dtype=np.float64).reshape(-1)
        if ptr.size != y.size + 1 or ptr[0] != 0 or ptr[-1] != w.size or idx.shape[0] != w.size:
            raise StructuralError("inconsistent design arrays")
        if np.any(np.diff(ptr) < 0):
            raise StructuralError("design row pointer must be non-decreasing")
        if idx.size and (np.any(idx < 0) or np.any(idx >= np.asarray(shape.dims))):
            raise StructuralError(f"design index out of range for shape {shape.dims}")
        if not (np.all(np.isfinite(y)) and np.all(np.isfinite(w))):
            raise ValidationError("design responses and weights must be finite")
        entry_obs = np.repeat(np.arange(y.size, dtype=np.int64), np.diff(ptr))
        l1 = np.bincount(entry_obs, weights=np.abs(w), minlength=y.size)
        if np.any(l1 > 1 + L1_TOL):
            worst = float(l1.max())
            raise ValidationError(f"measurement l1 norm {worst} exceeds 1", value=worst)
        flat = np.ravel_multi_index(tuple(idx.T), shape.dims) if idx.size else np.zeros(0, np.int64)
        for a in (idx, w, ptr, y, entry_obs, flat):
            a.setflags(write=False)
        for name, val in [
            ("shape", shape), ("entry_indices", idx), ("entry_weights", w), ("ptr", ptr),
            ("y", y), ("kind", DesignKind(self.kind)), ("entry_obs", entry_obs),
            ("flat_cells", flat),
        ]:
            object.__setattr__(self, name, val)

    @classmethod
    def from_observations(cls, shape, observations: Sequence[Observation], kind=None):
        shape = as_shape(shape)
        for ob in observations:
            if ob.x.shape != shape:
                raise StructuralError("observation shape differs from design shape")
        counts = [len(ob.x.weights) for ob in observations]
        ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        if observations:
            idx = np.concatenate([ob.x.indices for ob in observations])
            w = np.concatenate([ob.x.weights for ob in observations])
        else:
            idx, w = np.zeros((0, shape.order), np.int64), np.zeros(0)
        y = np.array([ob.y for ob in observations], dtype=np.float64)
        if kind is None:
            kind = _infer_kind(ptr, w)
        return cls(shape, idx, w, ptr, y, kind)

    @classmethod
    def empty(cls, shape) -> "DesignSet":
        shape = as_shape(shape)
        return cls(shape, np.zeros((0, shape.order), np.int64), np.zeros(0), [0], np.zeros(0))

    @property
    def n(self) -> int:
        return self.y.size

    @property
    def single_entry(self) -> bool:
        return bool(np.all(np.diff(self.ptr) == 1))

    @property
    def observations(self) -> list:
        out = []
        for i in range(self.n):
            sl = slice(self.ptr[i], self.ptr[i + 1])
            x = SparseMeasurement(self.shape, self.entry_indices[sl], self.entry_weights[sl])
            out.append(Observation(x, float(self.y[i])))
        return out

    def measurement(self, i: int) -> SparseMeasurement:
        sl = slice(self.ptr[i], self.ptr[i + 1])
        return SparseMeasurement(self.shape, self.entry_indices[sl], self.entry_weights[sl])

    def project(self, a: DenseTensor) -> np.ndarray:
        """``<X_i, A>`` for every observation."""
        if a.shape != self.shape:
            raise StructuralError(f"shape mismatch: {a.shape.dims} vs {self.shape.dims}")
        per_entry = a.flat[self.flat_cells] * self.entry_weights
        return np.bincount(self.entry_obs, weights=per_entry, minlength=self.n)

    def with_responses(self, y) -> "DesignSet":
        return DesignSet(self.shape, self.entry_indices, self.entry_weights, self.ptr, y, self.kind)


def _infer_kind(ptr, w) -> DesignKind:
    if np.all(np.diff(ptr) == 1) and np.all(w == 1.0):
        return DesignKind.ELEMENT_INDICATOR
    return DesignKind.GENERIC_SPARSE


def make_completion_design(shape, n: int, rng: np.random.Generator) -> list:
    """``n`` single-cell indicators drawn uniformly with replacement."""
    shape = as_shape(shape)
    if n < 1:
        raise ValidationError(f"need n >= 1 observations, got {n}")
    cells = rng.integers(0, shape.size, size=n)
    idx = np.stack(np.unravel_index(cells, shape.dims), axis=1)
    one = np.ones(1)
    return [SparseMeasurement(shape, row[None, :], one) for row in idx]


def make_multitask_design(M1: int, M2: int, M3: int, tasks, policy=GatePolicy.REJECT) -> list:
    """Place each task's predictor vector along mode 3 of slice ``(s, t)``.

    ``tasks`` is an iterable of ``(s, t, x)`` with ``len(x) == M3``.
    """
    shape = Shape((M1, M2, M3))
    out = []
    for s, t, x in tasks:
        x = np.asarray(x, dtype=np.float64).reshape(-1)
        if x.size != M3:
            raise StructuralError(f"predictor has length {x.size}, expected {M3}")
        if not (0 <= s < M1 and 0 <= t < M2):
            raise StructuralError(f"task ({s}, {t}) out of range")
        nz = np.flatnonzero(x)
        idx = np.column_stack([np.full(nz.size, s), np.full(nz.size, t), nz])
        out.append(normalize_l1_gate(SparseMeasurement(shape, idx, x[nz]), policy))
    return out


def normalize_l1_gate(x: SparseMeasurement, policy=GatePolicy.REJECT) -> SparseMeasurement:
    """Enforce ``||X||_1 <= 1`` by rejecting or by rescaling.

    Rescaling divides by ``max(1, ||X||_1)`` and multiplies the recorded
    ``scale`` accordingly.
    """
    policy = GatePolicy(policy)
    l1 = x.l1
    if l1 <= 1 + L1_TOL:
        return x
    if policy is GatePolicy.REJECT:
        raise ValidationError(f"measurement l1 norm {l1} exceeds 1", value=l1)
    return SparseMeasurement(x.shape, x.indices, x.weights / l1, scale=x.scale / l1)


def generate_responses(truth: CPFactors, xs, noise: NoiseSpec, rng, kind=None) -> DesignSet:
    """``y_i = <A*, X_i> + eps_i`` with i.i.d. ``N(0, sigma^2)`` noise."""
    from . import kernels

    shape = truth.shape
    design = DesignSet.from_observations(shape, [Observation(x, 0.0) for x in xs], kind)
    signal = kernels.predict(truth, design)
    eps = rng.normal(0.0, noise.sigma, size=design.n)
    return design.with_responses(signal + eps)


def completion_data(truth: CPFactors, n: int, noise: NoiseSpec, rng) -> DesignSet:
    """Vectorized equivalent of ``make_completion_design`` + ``generate_responses``.

    Consumes the random stream identically, so both routes give the same
    data for the same seed.
    """
    from . import kernels

    shape = truth.shape
    if n < 1:
        raise ValidationError(f"need n >= 1 observations, got {n}")
    cells = rng.integers(0, shape.size, size=n)
    idx = np.stack(np.unravel_index(cells, shape.dims), axis=1)
    design = DesignSet(shape, idx, np.ones(n), np.arange(n + 1), np.zeros(n), DesignKind.ELEMENT_INDICATOR)
    eps = rng.normal(0.0, noise.sigma, size=n)
    return design.with_responses(kernels.predict(truth, design) + eps)


# CSV I/O --------------------------------------------------------------------


def write_observations(path, design: DesignSet, responses_path=None) -> None:
    """Write single-entry designs as ``j1..jK,weight,y``.

    Multi-entry designs go to ``mid,j1..jK,weight`` at ``path`` plus
    ``mid,y`` at ``responses_path``.
    """
    K = design.shape.order
    jcols = [f"j{k + 1}" for k in range(K)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        if design.single_entry:
            wr.writerow(jcols + ["weight", "y"])
            for e in range(design.n):
                wr.writerow([*design.entry_indices[e].tolist(), repr(float(design.entry_weights[e])), repr(float(design.y[e]))])
            return
        if responses_path is None:
            raise ValidationError("multi-entry designs need a separate responses file")
        wr.writerow(["mid"] + jcols + ["weight"])
        for e in range(design.entry_weights.size):
            wr.writerow([int(design.entry_obs[e]), *design.entry_indices[e].tolist(), repr(float(design.entry_weights[e]))])
    with open(responses_path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["mid", "y"])
        for i in range(design.n):
            wr.writerow([i, repr(float(design.y[i]))])


def read_observations(path, shape=None, responses_path=None, policy=GatePolicy.REJECT) -> DesignSet:
    """Load either CSV layout; the shape is inferred from the indices if absent."""
    policy = GatePolicy(policy)
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValidationError(f"{path} is empty")
    header = [h.strip() for h in rows[0]]
    body = np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=np.float64)
    multi = header[0] == "mid"
    jcols = [h for h in header if h.startswith("j")]
    K = len(jcols)
    if K < 2 or (not multi and header[-2:] != ["weight", "y"]):
        raise ValidationError(f"unrecognized observation header {header}")
    if body.size == 0:
        body = body.reshape(0, len(header))
    if multi:
        if responses_path is None:
            raise ValidationError("multi-entry observations need a responses file")
        resp = np.loadtxt(responses_path, delimiter=",", skiprows=1, ndmin=2)
        mids_resp = resp[:, 0].astype(np.int64)
        order = np.argsort(mids_resp, kind="stable")
        y = resp[order, 1]
        mids = body[:, 0].astype(np.int64)
        srt = np.argsort(mids, kind="stable")
        body, mids = body[srt], mids[srt]
        _, inverse = np.unique(mids, return_inverse=True)
        idx = body[:, 1 : 1 + K].astype(np.int64)
        w = body[:, 1 + K]
        counts = np.bincount(inverse, minlength=y.size)
    else:
        idx = body[:, :K].astype(np.int64)
        w = body[:, K]
        y = body[:, K + 1]
        counts = np.ones(y.size, dtype=np.int64)
    if shape is None:
        shape = tuple(int(m) + 1 for m in idx.max(axis=0))
    shape = as_shape(shape)
    ptr = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
    obs = []
    for i in range(y.size):
        x = SparseMeasurement(shape, idx[ptr[i] : ptr[i + 1]], w[ptr[i] : ptr[i + 1]])
        x = normalize_l1_gate(x, policy)
        obs.append(Observation(x, float(y[i]) * x.scale))
    return DesignSet.from_observations(shape, obs)
