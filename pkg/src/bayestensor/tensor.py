"""CP tensor algebra: composition, elementwise access, inner products and norms.

Dense tensors are stored as C-ordered numpy arrays, so the flat layout is
last-index-fastest. That layout is shared by the text formats below and by
every oracle in the test suite.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np

from .errors import StructuralError, UnsupportedOperationError, ValidationError

__all__ = [
    "Shape",
    "DenseTensor",
    "CPFactors",
    "Lp",
    "Infinity",
    "Max2UpperBound",
    "as_shape",
    "cp_compose",
    "cp_element",
    "inner_product",
    "norm",
    "max2_upper_bound",
    "empirical_sq_norm",
    "population_sq_norm_uniform",
    "read_dense",
    "write_dense",
    "read_factors",
    "write_factors",
]


_INT64_MAX = int(np.iinfo(np.int64).max)


@dataclass(frozen=True)
class Shape:
    """Mode sizes ``(M_1, ..., M_K)`` of a tensor of order ``K >= 2``."""

    dims: tuple

    def __post_init__(self):
        dims = tuple(int(m) for m in self.dims)
        if len(dims) < 2:
            raise StructuralError(f"tensor order must be >= 2, got {len(dims)}")
        if any(m < 1 for m in dims):
            raise StructuralError(f"every mode size must be >= 1, got {dims}")
        if math.prod(dims) > _INT64_MAX:
            raise StructuralError(f"element count of {dims} overflows int64")
        object.__setattr__(self, "dims", dims)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def size(self) -> int:
        return math.prod(self.dims)

    @property
    def mode_sum(self) -> int:
        return sum(self.dims)

    def __iter__(self):
        return iter(self.dims)

    def __len__(self):
        return len(self.dims)

    def __getitem__(self, k):
        return self.dims[k]


def as_shape(shape) -> Shape:
    return shape if isinstance(shape, Shape) else Shape(tuple(shape))


@dataclass(frozen=True, eq=False)
class DenseTensor:
    """Immutable K-mode real array."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64, order="C")
        Shape(values.shape)
        if not np.all(np.isfinite(values)):
            raise ValidationError("dense tensor has non-finite entries")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_flat(cls, shape, flat) -> "DenseTensor":
        shape = as_shape(shape)
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != shape.size:
            raise StructuralError(
                f"expected {shape.size} values for shape {shape.dims}, got {flat.size}"
            )
        return cls(flat.reshape(shape.dims))

    @classmethod
    def zeros(cls, shape) -> "DenseTensor":
        return cls(np.zeros(as_shape(shape).dims))

    @property
    def shape(self) -> Shape:
        return Shape(self.values.shape)

    @property
    def flat(self) -> np.ndarray:
        return self.values.reshape(-1)

    def __sub__(self, other: "DenseTensor") -> "DenseTensor":
        _check_same_shape(self, other)
        return DenseTensor(self.values - other.values)

    def __add__(self, other: "DenseTensor") -> "DenseTensor":
        _check_same_shape(self, other)
        return DenseTensor(self.values + other.values)

    def __mul__(self, c: float) -> "DenseTensor":
        return DenseTensor(self.values * float(c))

    __rmul__ = __mul__


@dataclass(frozen=True, eq=False)
class CPFactors:
    """Rank-``d`` CP representation ``[[U^(1), ..., U^(K)]]``.

    ``factors[k]`` has shape ``(rank, M_k)``: row ``r`` is the mode-``k``
    vector of component ``r``. Rank zero is allowed and composes to zero.
    """

    factors: tuple

    def __post_init__(self):
        mats = tuple(np.array(u, dtype=np.float64, order="C", ndmin=2) for u in self.factors)
        if len(mats) < 2:
            raise StructuralError(f"need at least 2 factor matrices, got {len(mats)}")
        ranks = {u.shape[0] for u in mats}
        if len(ranks) != 1 or any(u.ndim != 2 for u in mats):
            raise StructuralError(
                f"factor matrices disagree on rank: {[u.shape for u in mats]}"
            )
        Shape(tuple(u.shape[1] for u in mats))
        for u in mats:
            if not np.all(np.isfinite(u)):
                raise ValidationError("factor matrix has non-finite entries")
            u.setflags(write=False)
        object.__setattr__(self, "factors", mats)

    @classmethod
    def zeros(cls, shape, rank: int) -> "CPFactors":
        return cls(tuple(np.zeros((rank, m)) for m in as_shape(shape)))

    @property
    def rank(self) -> int:
        return self.factors[0].shape[0]

    @cached_property
    def shape(self) -> Shape:
        return Shape(tuple(u.shape[1] for u in self.factors))

    @property
    def order(self) -> int:
        return len(self.factors)

    def frobenius_sq_sum(self) -> float:
        """Sum over modes of the squared Frobenius norm of each factor."""
        return float(sum(np.sum(u * u) for u in self.factors))

    def packed_columns(self) -> np.ndarray:
        """All factor columns stacked into one ``(sum M_k, rank)`` array.

        Column ``j`` of mode ``k`` lands in row ``offsets[k] + j``; the
        compiled kernels index factors through this layout.
        """
        return np.ascontiguousarray(np.concatenate(self.factors, axis=1).T)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate(([0], np.cumsum(self.shape.dims)[:-1])).astype(np.int64)


# Norm selectors -------------------------------------------------------------


@dataclass(frozen=True)
class Lp:
    p: float

    def __post_init__(self):
        if not self.p >= 1:
            raise ValidationError(f"Lp norm needs p >= 1, got {self.p}")


@dataclass(frozen=True)
class Infinity:
    pass


@dataclass(frozen=True)
class Max2UpperBound:
    pass


NormKind = Union[Lp, Infinity, Max2UpperBound]


def _as_norm_kind(kind) -> NormKind:
    if isinstance(kind, (Lp, Infinity, Max2UpperBound)):
        return kind
    if kind in ("inf", "infinity") or (isinstance(kind, float) and math.isinf(kind)):
        return Infinity()
    if kind in ("max2", "max2_upper_bound"):
        return Max2UpperBound()
    return Lp(float(kind))


# Operations -----------------------------------------------------------------


def _check_same_shape(a, b):
    if a.shape != b.shape:
        raise StructuralError(f"shape mismatch: {a.shape.dims} vs {b.shape.dims}")


def cp_compose(factors: CPFactors) -> DenseTensor:
    """Materialize ``sum_r outer(U^(1)[r], ..., U^(K)[r])``."""
    shape = factors.shape
    if factors.rank == 0:
        return DenseTensor.zeros(shape)
    # mode-by-mode Khatri-Rao accumulation, keeps the rank axis last
    acc = factors.factors[0].T
    for u in factors.factors[1:]:
        acc = (acc[..., None, :] * u.T).reshape(-1, factors.rank)
    return DenseTensor(acc.sum(axis=1).reshape(shape.dims))


def _check_index(shape: Shape, index: Sequence[int]) -> tuple:
    index = tuple(int(j) for j in index)
    if len(index) != shape.order or any(not 0 <= j < m for j, m in zip(index, shape)):
        raise StructuralError(f"index {index} out of range for shape {shape.dims}")
    return index


def cp_element(factors: CPFactors, index: Sequence[int]) -> float:
    """Single entry of the composed tensor, without materializing it."""
    index = _check_index(factors.shape, index)
    if factors.rank == 0:
        return 0.0
    prod = np.ones(factors.rank)
    for u, j in zip(factors.factors, index):
        prod = prod * u[:, j]
    return float(prod.sum())


def inner_product(a: DenseTensor, x) -> float:
    """``<A, X>`` for a dense ``X`` or a sparse measurement.

    Sparse measurements (anything exposing ``indices`` and ``weights``)
    only touch their stored entries.
    """
    if isinstance(x, DenseTensor):
        _check_same_shape(a, x)
        return float(np.sum(a.values * x.values))
    if x.shape != a.shape:
        raise StructuralError(f"shape mismatch: {a.shape.dims} vs {x.shape.dims}")
    if len(x.weights) == 0:
        return 0.0
    cells = a.values[tuple(x.indices.T)]
    return float(np.dot(cells, x.weights))


def norm(a: DenseTensor, kind=Lp(2.0)) -> float:
    kind = _as_norm_kind(kind)
    if isinstance(kind, Max2UpperBound):
        raise UnsupportedOperationError(
            "the max-norm bound is only defined on CP factors; use max2_upper_bound"
        )
    v = np.abs(a.flat)
    if isinstance(kind, Infinity):
        return float(v.max(initial=0.0))
    p = kind.p
    if p == 1.0:
        return float(v.sum())
    if p == 2.0:
        return float(math.sqrt(np.dot(v, v)))
    return float(np.sum(v**p) ** (1.0 / p))


def max2_upper_bound(factors: CPFactors) -> float:
    """Largest Euclidean norm of any factor column ``U^(k)[:, i]``.

    This is the max-norm of the given decomposition, hence an upper bound
    on the minimum over all rank-``d`` decompositions of the same tensor.
    """
    if factors.rank == 0:
        return 0.0
    return float(max(np.sqrt(np.sum(u * u, axis=0)).max() for u in factors.factors))


def empirical_sq_norm(a: DenseTensor, b: DenseTensor, design) -> float:
    """In-sample squared distance ``(1/n) sum_i <X_i, a - b>^2``."""
    _check_same_shape(a, b)
    if design.shape != a.shape:
        raise StructuralError(
            f"design shape {design.shape.dims} does not match tensor {a.shape.dims}"
        )
    if design.n == 0:
        raise ValidationError("empirical norm needs a nonempty design")
    diff = (a.values - b.values).reshape(-1)
    per_entry = diff[design.flat_cells] * design.entry_weights
    proj = np.bincount(design.entry_obs, weights=per_entry, minlength=design.n)
    return float(np.dot(proj, proj) / design.n)


def population_sq_norm_uniform(a: DenseTensor, b: DenseTensor) -> float:
    """Out-of-sample squared distance under the uniform single-cell design."""
    _check_same_shape(a, b)
    diff = (a.values - b.values).reshape(-1)
    return float(np.dot(diff, diff) / diff.size)


# Text formats ---------------------------------------------------------------


def _fmt(values: Iterable[float]) -> str:
    return " ".join(repr(float(v)) for v in values)


def write_dense(path, tensor: DenseTensor) -> None:
    """``K M_1 .. M_K`` header, then values in canonical order."""
    dims = tensor.shape.dims
    lines = [" ".join(str(m) for m in (len(dims),) + dims)]
    flat = tensor.flat
    step = dims[-1]
    lines.extend(_fmt(flat[i : i + step]) for i in range(0, flat.size, step))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dense(path) -> DenseTensor:
    tokens = Path(path).read_text().split()
    try:
        k = int(tokens[0])
        dims = tuple(int(t) for t in tokens[1 : 1 + k])
        values = np.array([float(t) for t in tokens[1 + k :]])
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"malformed dense tensor file {path}: {exc}") from exc
    if len(dims) != k:
        raise ValidationError(f"malformed dense tensor header in {path}")
    return DenseTensor.from_flat(dims, values)


def write_factors(path, factors: CPFactors) -> None:
    """``K d M_1 .. M_K`` header, then K row-major blocks of ``d x M_k`` reals."""
    Path(path).write_text(format_factors(factors))


def format_factors(factors: CPFactors) -> str:
    dims = factors.shape.dims
    lines = [" ".join(str(m) for m in (len(dims), factors.rank) + dims)]
    for u in factors.factors:
        lines.extend(_fmt(row) for row in u)
    return "\n".join(lines) + "\n"


def parse_factors(text: str) -> CPFactors:
    tokens = text.split()
    try:
        k, d = int(tokens[0]), int(tokens[1])
        dims = tuple(int(t) for t in tokens[2 : 2 + k])
        values = [float(t) for t in tokens[2 + k :]]
    except (IndexError, ValueError) as exc:
        raise ValidationError(f"malformed factors text: {exc}") from exc
    need = d * sum(dims)
    if len(dims) != k or len(values) != need:
        raise ValidationError(f"factors text expects {need} values, found {len(values)}")
    mats, pos = [], 0
    for m in dims:
        mats.append(np.array(values[pos : pos + d * m]).reshape(d, m))
        pos += d * m
    return CPFactors(tuple(mats))


def read_factors(path) -> CPFactors:
    return parse_factors(Path(path).read_text())
