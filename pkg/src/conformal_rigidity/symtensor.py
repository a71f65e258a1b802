"""Symmetric multilinear maps (R^n)^r -> R^n in packed coordinates.

A symmetric r-linear map is determined by its values on nondecreasing index
tuples, so it is stored as an (n, C(n+r-1, r)) coefficient array: one row per
output coordinate, one column per sorted multi-index in lexicographic order.
``to_vector`` / ``from_vector`` flatten that array row major (output
coordinate major, multi-index minor); every module of this package shares the
convention, and no extra weighting is applied to the coordinates.

Dense ``(n, n, ..., n)`` views are materialized on demand for einsum work;
the packed array stays the canonical value.  Orders r = 1, 2, 3 are the ones
exercised here (matrices, quadratic and cubic terms of jets).
"""

from __future__ import annotations

import itertools
import math
from functools import lru_cache

import numpy as np

__all__ = [
    "SymMultiMap",
    "BasisMatrix",
    "sym_index_count",
    "sym_dim",
    "multi_indices",
    "sym_eval",
    "make_Q",
    "bracket",
    "cyclic_compose",
    "op_norm",
    "to_vector",
    "from_vector",
    "flatten_maps",
    "unflatten_maps",
    "random_basis",
    "coeffs_allclose",
]

#: Default relative tolerance for coefficient comparisons, scaled by the
#: larger coefficient magnitude of the two operands.
COEFF_RTOL = 1e-10


def sym_index_count(n: int, r: int) -> int:
    """Number of sorted multi-indices of length r over {0..n-1}."""
    return math.comb(n + r - 1, r)


def sym_dim(n: int, r: int) -> int:
    """Coordinate dimension of the space of symmetric r-linear maps on R^n."""
    return n * sym_index_count(n, r)


@lru_cache(maxsize=None)
def _index_table(n: int, r: int):
    """Packed/dense index bookkeeping for order r in dimension n.

    Returns (packed, slot_of, dense_slots, representatives) where ``packed``
    lists sorted multi-indices lexicographically, ``dense_slots[flat]`` maps a
    flattened dense position to its packed column and ``representatives[s]``
    is the flat dense position of the sorted arrangement of column s.
    """
    packed = tuple(itertools.combinations_with_replacement(range(n), r))
    slot_of = {m: s for s, m in enumerate(packed)}
    dense_slots = np.empty(n**r, dtype=np.intp)
    representatives = np.empty(len(packed), dtype=np.intp)
    for flat, m in enumerate(itertools.product(range(n), repeat=r)):
        key = tuple(sorted(m))
        s = slot_of[key]
        dense_slots[flat] = s
        if m == key:
            representatives[s] = flat
    return packed, slot_of, dense_slots, representatives


def multi_indices(n: int, r: int) -> tuple:
    """Sorted multi-indices of length r over {0..n-1}, lexicographic order."""
    return _index_table(n, r)[0]


class SymMultiMap:
    """A symmetric r-multilinear map (R^n)^r -> R^n, packed storage.

    Values are immutable after construction; instances may be freely shared.
    """

    __slots__ = ("order", "dim", "coeffs", "_dense")

    def __init__(self, order: int, dim: int, coeffs):
        if order < 1:
            raise ValueError(f"order must be >= 1, got {order}")
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        coeffs = np.asarray(coeffs, dtype=float)
        expected = (dim, sym_index_count(dim, order))
        if coeffs.shape != expected:
            raise ValueError(
                f"coefficient array has shape {coeffs.shape}, expected {expected}"
            )
        self.order = order
        self.dim = dim
        self.coeffs = coeffs
        self.coeffs.setflags(write=False)
        self._dense = None

    @classmethod
    def zeros(cls, dim: int, order: int) -> "SymMultiMap":
        return cls(order, dim, np.zeros((dim, sym_index_count(dim, order))))

    @classmethod
    def from_dense(cls, dense, symmetrize: bool = True) -> "SymMultiMap":
        """Pack a dense (n, n, ..., n) array.

        With ``symmetrize`` the input is averaged over argument permutations
        first, so mildly asymmetric numerical data is projected onto the
        symmetric part.
        """
        dense = np.asarray(dense, dtype=float)
        if dense.ndim < 2:
            raise ValueError("dense array must have at least 2 axes")
        order = dense.ndim - 1
        dim = dense.shape[0]
        if dense.shape != (dim,) * (order + 1):
            raise ValueError(f"dense array must be square, got shape {dense.shape}")
        if symmetrize and order > 1:
            acc = np.zeros_like(dense)
            count = 0
            for perm in itertools.permutations(range(1, order + 1)):
                acc += dense.transpose((0,) + perm)
                count += 1
            dense = acc / count
        _, _, _, reps = _index_table(dim, order)
        flat = dense.reshape(dim, -1)
        return cls(order, dim, flat[:, reps])

    @property
    def dense(self) -> np.ndarray:
        """Dense (n, n, ..., n) view; cached, treat as read-only."""
        if self._dense is None:
            _, _, dense_slots, _ = _index_table(self.dim, self.order)
            d = self.coeffs[:, dense_slots].reshape(
                (self.dim,) + (self.dim,) * self.order
            )
            d.setflags(write=False)
            self._dense = d
        return self._dense

    def eval(self, *args) -> np.ndarray:
        """Evaluate on ``order`` vectors of dimension ``dim``."""
        if len(args) != self.order:
            raise ValueError(
                f"expected {self.order} arguments, got {len(args)}"
            )
        vecs = []
        for a in args:
            a = np.asarray(a, dtype=float)
            if a.shape != (self.dim,):
                raise ValueError(
                    f"argument has shape {a.shape}, expected ({self.dim},)"
                )
            vecs.append(a)
        letters = "abcdefgh"[: self.order]
        subscripts = "o" + letters + "," + ",".join(letters) + "->o"
        return np.einsum(subscripts, self.dense, *vecs)

    __call__ = eval

    def to_vector(self) -> np.ndarray:
        """Flatten: output coordinate major, lexicographic multi-index minor."""
        return self.coeffs.reshape(-1).copy()

    @classmethod
    def from_vector(cls, dim: int, order: int, vec) -> "SymMultiMap":
        vec = np.asarray(vec, dtype=float)
        expected = sym_dim(dim, order)
        if vec.shape != (expected,):
            raise ValueError(f"vector has length {vec.size}, expected {expected}")
        return cls(order, dim, vec.reshape(dim, -1))

    def coeff(self, out: int, multi_index) -> float:
        """Table lookup: the coefficient at (output coordinate, multi-index).

        The multi-index is sorted internally, so any arrangement addresses
        the same packed entry.
        """
        _, slot_of, _, _ = _index_table(self.dim, self.order)
        key = tuple(sorted(multi_index))
        if key not in slot_of:
            raise ValueError(f"invalid multi-index {multi_index}")
        return float(self.coeffs[out, slot_of[key]])

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.coeffs))) if self.coeffs.size else 0.0

    def __add__(self, other: "SymMultiMap") -> "SymMultiMap":
        self._check_compatible(other)
        return SymMultiMap(self.order, self.dim, self.coeffs + other.coeffs)

    def __sub__(self, other: "SymMultiMap") -> "SymMultiMap":
        self._check_compatible(other)
        return SymMultiMap(self.order, self.dim, self.coeffs - other.coeffs)

    def __mul__(self, scalar: float) -> "SymMultiMap":
        return SymMultiMap(self.order, self.dim, self.coeffs * float(scalar))

    __rmul__ = __mul__

    def __neg__(self) -> "SymMultiMap":
        return SymMultiMap(self.order, self.dim, -self.coeffs)

    def _check_compatible(self, other: "SymMultiMap") -> None:
        if not isinstance(other, SymMultiMap):
            raise TypeError(f"expected SymMultiMap, got {type(other).__name__}")
        if other.dim != self.dim or other.order != self.order:
            raise ValueError(
                f"incompatible maps: order/dim ({self.order},{self.dim}) "
                f"vs ({other.order},{other.dim})"
            )

    def __repr__(self) -> str:
        return f"SymMultiMap(order={self.order}, dim={self.dim})"


def coeffs_allclose(F: SymMultiMap, G: SymMultiMap, rtol: float = COEFF_RTOL,
                    atol: float = 0.0) -> bool:
    """Coefficient comparison with tolerance scaled by the larger magnitude."""
    scale = max(F.max_abs(), G.max_abs())
    return bool(np.all(np.abs(F.coeffs - G.coeffs) <= atol + rtol * max(scale, 1e-300)))


def sym_eval(F: SymMultiMap, args) -> np.ndarray:
    """Evaluate F on a sequence of ``F.order`` vectors."""
    return F.eval(*args)


def make_Q(v) -> SymMultiMap:
    """The conformal quadratic form of a vector.

    Q_v(x, y) = <x, y> v - <x, v> y - <y, v> x.  The assignment v -> Q_v is
    linear and, for n >= 2, injective.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError("v must be a vector")
    n = v.size
    eye = np.eye(n)
    dense = (
        np.einsum("ij,o->oij", eye, v)
        - np.einsum("i,oj->oij", v, eye)
        - np.einsum("j,oi->oij", v, eye)
    )
    return SymMultiMap.from_dense(dense, symmetrize=False)


def cyclic_compose(Qd: np.ndarray, Pd: np.ndarray) -> np.ndarray:
    """Dense cyclic plug-in of two bilinear maps.

    Returns the trilinear T(x, y, z) = Q(x, P(y, z)) + Q(y, P(z, x))
    + Q(z, P(x, y)); symmetric whenever P is.
    """
    M = np.einsum("oim,mjk->oijk", Qd, Pd)
    return M + np.einsum("ojki->oijk", M) + np.einsum("okij->oijk", M)


def bracket(Q: SymMultiMap, Qp: SymMultiMap) -> SymMultiMap:
    """Antisymmetrized cyclic composition of two quadratic maps.

    [Q, Q'](x, y, z) = {Q(x, Q'(y, z)) + cyclic} - {Q'(x, Q(y, z)) + cyclic}.
    Bilinear in (Q, Q'), antisymmetric under swapping them, and symmetric in
    its three vector arguments.
    """
    if Q.order != 2 or Qp.order != 2:
        raise ValueError("bracket requires two maps of order 2")
    if Q.dim != Qp.dim:
        raise ValueError(f"dimension mismatch: {Q.dim} vs {Qp.dim}")
    dense = cyclic_compose(Q.dense, Qp.dense) - cyclic_compose(Qp.dense, Q.dense)
    return SymMultiMap.from_dense(dense, symmetrize=False)


def op_norm(F: SymMultiMap, mode: str = "sampled", n_samples: int = 2000,
            rng=None):
    """Operator norm sup{|F(x_1..x_r)| : |x_i| <= 1}.

    mode="exact" is available for order 1 only and returns the largest
    singular value.  mode="sampled" returns a pair (lower, upper): the lower
    bound is the best value seen over sampled unit tuples, the upper bound
    comes from dense coefficient sums.  The true norm lies in between.
    """
    if mode == "exact":
        if F.order != 1:
            raise ValueError("exact operator norms are supported for order 1 only")
        return float(np.linalg.svd(F.coeffs, compute_uv=False)[0])
    if mode != "sampled":
        raise ValueError(f"unknown mode {mode!r}")

    n, r = F.dim, F.order
    dense = F.dense
    upper = float(np.sqrt(np.sum(np.sum(np.abs(dense.reshape(n, -1)), axis=1) ** 2)))

    rng = np.random.default_rng(rng)
    lower = 0.0
    # basis tuples, repeated-argument samples, then independent samples
    candidates = list(itertools.product(range(n), repeat=r))
    for c in candidates:
        val = np.linalg.norm(F.eval(*(np.eye(n)[i] for i in c)))
        lower = max(lower, float(val))
    n_rep = max(n_samples // 4, 1)
    for _ in range(n_rep):
        x = rng.standard_normal(n)
        x /= np.linalg.norm(x)
        lower = max(lower, float(np.linalg.norm(F.eval(*([x] * r)))))
    for _ in range(n_samples):
        args = []
        for _ in range(r):
            x = rng.standard_normal(n)
            args.append(x / np.linalg.norm(x))
        lower = max(lower, float(np.linalg.norm(F.eval(*args))))
    return lower, upper


def to_vector(F: SymMultiMap) -> np.ndarray:
    return F.to_vector()


def from_vector(r: int, n: int, vec) -> SymMultiMap:
    return SymMultiMap.from_vector(n, r, vec)


def flatten_maps(maps) -> np.ndarray:
    """Concatenate coordinate vectors of a tuple of maps, tuple index major."""
    return np.concatenate([m.to_vector() for m in maps])


def unflatten_maps(vec, dim: int, order: int, count: int):
    """Inverse of flatten_maps for ``count`` maps of a common order."""
    vec = np.asarray(vec, dtype=float)
    d = sym_dim(dim, order)
    if vec.shape != (count * d,):
        raise ValueError(f"vector has length {vec.size}, expected {count * d}")
    return [
        SymMultiMap.from_vector(dim, order, vec[i * d:(i + 1) * d])
        for i in range(count)
    ]


class BasisMatrix:
    """An ordered basis of R^n, held as the columns of an invertible matrix."""

    __slots__ = ("matrix",)

    def __init__(self, matrix, tol: float = 1e-10):
        matrix = np.asarray(matrix, dtype=float)
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValueError(f"basis matrix must be square, got {matrix.shape}")
        sv = np.linalg.svd(matrix, compute_uv=False)
        if sv[-1] <= tol * max(sv[0], 1.0):
            raise ValueError(
                f"basis matrix is numerically singular (sigma_min={sv[-1]:.3e})"
            )
        self.matrix = matrix
        self.matrix.setflags(write=False)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def column(self, i: int) -> np.ndarray:
        return self.matrix[:, i].copy()

    @property
    def columns(self) -> list:
        return [self.matrix[:, i].copy() for i in range(self.dim)]

    @classmethod
    def identity(cls, n: int) -> "BasisMatrix":
        return cls(np.eye(n))

    def __repr__(self) -> str:
        return f"BasisMatrix(dim={self.dim})"


def random_basis(n: int, rng, scale: float = 2.0, max_cond: float = 1e3) -> BasisMatrix:
    """Random basis with entries uniform in [-scale, scale], condition capped."""
    rng = np.random.default_rng(rng)
    for _ in range(1000):
        m = rng.uniform(-scale, scale, size=(n, n))
        if np.linalg.cond(m) <= max_cond:
            return BasisMatrix(m)
    raise RuntimeError("failed to draw a well-conditioned basis")
