"""The sphere S^n as R^n plus a point at infinity, and the standard actions.

Points carry one of two coordinate representations: affine coordinates on
R^n, or coordinates in the inversion chart at infinity, where a point with
affine coordinates x is written as phi_bar(x) = x / |x|^2 and infinity itself
is the chart origin.  Representations switch automatically when coordinates
grow large, so words that push points toward infinity stay finite.

The standard action of the group < a, b_1..b_n | a b_i a^-1 = b_i^k,
b_i b_j = b_j b_i > acts by the dilation x -> kx and the translations
x -> x + v_i for a basis (v_1..v_n); infinity is its unique global fixed
point.  ``local_jet`` returns the order-3 jets at the chart origin of the
chart-conjugated generator maps in closed form.

Distances between sphere points are chordal: points are embedded on the unit
sphere of R^{n+1} by inverse stereographic projection and compared there, so
infinity needs no special casing.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .jets import Jet3, scaling_jet
from .symtensor import BasisMatrix, SymMultiMap, make_Q

__all__ = [
    "SWITCH_RADIUS",
    "phi_bar",
    "SpherePoint",
    "PointBatch",
    "sphere_distance",
    "AffineSphereMap",
    "ChartBumpMap",
    "SphereMapChain",
    "ActionSpec",
    "StandardAction",
    "word_inverse",
    "relation_words",
    "RelationReport",
    "verify_relations",
    "translation_chart_jet",
    "local_jet",
    "Chart",
    "chart_at",
]

#: Coordinates larger than this trigger a representation switch.
SWITCH_RADIUS = 1e6

# sup of |d/dy psi(|y|^2 / r^2)| * r for the bump profile below; used to
# budget Lipschitz constants of displacement fields.
BUMP_LIP_CONST = 8.0 / np.e


def phi_bar(x: np.ndarray) -> np.ndarray:
    """Inversion chart x -> x / |x|^2, an involution on R^n minus 0."""
    x = np.asarray(x, dtype=float)
    n2 = np.sum(x * x, axis=-1, keepdims=True)
    if np.any(n2 == 0.0):
        raise ValueError("phi_bar is undefined at the origin")
    return x / n2


class PointBatch:
    """A batch of sphere points: (N, n) coordinates plus per-row chart flags."""

    __slots__ = ("coords", "in_chart")

    def __init__(self, coords, in_chart):
        coords = np.array(coords, dtype=float)
        if coords.ndim != 2:
            raise ValueError("coords must be (N, n)")
        in_chart = np.array(in_chart, dtype=bool)
        if in_chart.shape != (coords.shape[0],):
            raise ValueError("in_chart must be (N,)")
        self.coords = coords
        self.in_chart = in_chart

    @classmethod
    def from_affine(cls, X) -> "PointBatch":
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return cls(X, np.zeros(X.shape[0], dtype=bool))

    @classmethod
    def from_chart(cls, Y) -> "PointBatch":
        Y = np.atleast_2d(np.asarray(Y, dtype=float))
        return cls(Y, np.ones(Y.shape[0], dtype=bool))

    @property
    def size(self) -> int:
        return self.coords.shape[0]

    @property
    def dim(self) -> int:
        return self.coords.shape[1]

    def chart(self) -> np.ndarray:
        """Chart coordinates of every row (rows at affine 0 are undefined)."""
        out = self.coords.copy()
        aff = ~self.in_chart
        if aff.any():
            out[aff] = phi_bar(self.coords[aff])
        return out

    def affine(self) -> np.ndarray:
        """Affine coordinates of every row (rows at infinity are undefined)."""
        out = self.coords.copy()
        ch = self.in_chart
        if ch.any():
            out[ch] = phi_bar(self.coords[ch])
        return out

    def embed(self) -> np.ndarray:
        """Unit-sphere embedding in R^{n+1} (inverse stereographic)."""
        n2 = np.sum(self.coords * self.coords, axis=1)
        denom = 1.0 + n2
        out = np.empty((self.size, self.dim + 1))
        out[:, :-1] = 2.0 * self.coords / denom[:, None]
        last = (n2 - 1.0) / denom
        last[self.in_chart] = -last[self.in_chart]
        out[:, -1] = last
        return out

    def rebalanced(self, switch_radius: float = SWITCH_RADIUS) -> "PointBatch":
        """Switch representations where coordinates got large."""
        norms = np.linalg.norm(self.coords, axis=1)
        coords = self.coords.copy()
        in_chart = self.in_chart.copy()
        flip_to_chart = (~in_chart) & (norms > switch_radius)
        flip_to_affine = in_chart & (norms > 1.0)
        for mask, target in ((flip_to_chart, True), (flip_to_affine, False)):
            if mask.any():
                coords[mask] = phi_bar(coords[mask])
                in_chart[mask] = target
        return PointBatch(coords, in_chart)

    def point(self, i: int) -> "SpherePoint":
        return SpherePoint(self.coords[i].copy(), bool(self.in_chart[i]))

    def __repr__(self) -> str:
        return f"PointBatch(size={self.size}, dim={self.dim})"


class SpherePoint:
    """A single point of S^n: affine coordinates or chart-at-infinity coordinates."""

    __slots__ = ("coords", "in_chart")

    def __init__(self, coords, in_chart: bool = False):
        self.coords = np.asarray(coords, dtype=float).copy()
        if self.coords.ndim != 1:
            raise ValueError("coords must be a vector")
        self.in_chart = bool(in_chart)

    @classmethod
    def finite(cls, x) -> "SpherePoint":
        return cls(x, False)

    @classmethod
    def infinity(cls, n: int) -> "SpherePoint":
        return cls(np.zeros(n), True)

    @property
    def dim(self) -> int:
        return self.coords.size

    @property
    def is_infinity(self) -> bool:
        return self.in_chart and not np.any(self.coords)

    def affine(self) -> np.ndarray:
        if self.in_chart:
            if self.is_infinity:
                raise ValueError("the point at infinity has no affine coordinates")
            return phi_bar(self.coords)
        return self.coords.copy()

    def chart(self) -> np.ndarray:
        if self.in_chart:
            return self.coords.copy()
        if not np.any(self.coords):
            raise ValueError("the affine origin has no chart coordinates")
        return phi_bar(self.coords)

    def batch(self) -> PointBatch:
        return PointBatch(self.coords[None, :].copy(), np.array([self.in_chart]))

    def __repr__(self) -> str:
        kind = "chart" if self.in_chart else "affine"
        return f"SpherePoint({kind}, {self.coords})"


def _as_batch(p):
    if isinstance(p, PointBatch):
        return p, False
    if isinstance(p, SpherePoint):
        return p.batch(), True
    raise TypeError(f"expected SpherePoint or PointBatch, got {type(p).__name__}")


def sphere_distance(p, q):
    """Chordal distance (Euclidean in the unit-sphere embedding), in [0, 2]."""
    pb, p_single = _as_batch(p)
    qb, q_single = _as_batch(q)
    d = np.linalg.norm(pb.embed() - qb.embed(), axis=1)
    if p_single and q_single:
        return float(d[0])
    return d


def _apply_affine(coords, in_chart, M, W):
    """Row-wise x -> M x + w on mixed-representation coordinates.

    ``W`` may be a single vector or one row per point.  Chart rows of norm up
    to 1/2 use the closed-form chart expression, which is smooth through the
    chart origin; larger chart rows round-trip through affine coordinates.
    """
    N = coords.shape[0]
    W = np.asarray(W, dtype=float)
    W_rows = W if W.ndim == 2 else np.broadcast_to(W, coords.shape)
    out = np.empty_like(coords)
    out_chart = np.zeros(N, dtype=bool)

    aff = ~in_chart
    if aff.any():
        out[aff] = coords[aff] @ M.T + W_rows[aff]

    ch_idx = np.nonzero(in_chart)[0]
    if ch_idx.size:
        Y = coords[ch_idx]
        n2 = np.sum(Y * Y, axis=1)
        small = n2 <= 0.25
        if small.any():
            rows = ch_idx[small]
            Ys = Y[small]
            s = n2[small][:, None]
            # the image of the affine point y/s is u/s with u = M y + s w
            U = Ys @ M.T + s * W_rows[rows]
            un2 = np.sum(U * U, axis=1)[:, None]
            at_inf = s[:, 0] == 0.0
            # images with affine norm below 1 leave the chart representation
            to_affine = (un2[:, 0] < s[:, 0] ** 2) & ~at_inf
            keep_chart = ~to_affine & ~at_inf
            res = np.zeros_like(U)
            if keep_chart.any():
                res[keep_chart] = (
                    s[keep_chart] * U[keep_chart] / un2[keep_chart]
                )
            if to_affine.any():
                res[to_affine] = U[to_affine] / s[to_affine]
            out[rows] = res
            out_chart[rows] = ~to_affine
        big = ~small
        if big.any():
            rows = ch_idx[big]
            X = phi_bar(Y[big])
            out[rows] = X @ M.T + W_rows[rows]
    return out, out_chart


class AffineSphereMap:
    """Extension of the affine map x -> M x + w to the sphere (infinity maps
    to infinity when w is finite; M must be invertible)."""

    __slots__ = ("M", "w", "Minv")

    def __init__(self, M, w=None):
        self.M = np.asarray(M, dtype=float)
        n = self.M.shape[0]
        if self.M.shape != (n, n):
            raise ValueError("M must be square")
        self.w = np.zeros(n) if w is None else np.asarray(w, dtype=float)
        self.Minv = np.linalg.inv(self.M)

    def compose_after(self, other: "AffineSphereMap") -> "AffineSphereMap":
        """The affine map self o other."""
        return AffineSphereMap(self.M @ other.M, self.M @ other.w + self.w)

    def inverse(self) -> "AffineSphereMap":
        return AffineSphereMap(self.Minv, -self.Minv @ self.w)

    def apply(self, p):
        batch, single = _as_batch(p)
        coords, in_chart = _apply_affine(
            batch.coords, batch.in_chart, self.M, self.w
        )
        out = PointBatch(coords, in_chart).rebalanced()
        return out.point(0) if single else out

    def apply_inverse(self, p):
        return self.inverse().apply(p)


def _bump_profile(s: np.ndarray) -> np.ndarray:
    """Smooth profile with value 1 at s = 0 and support in s < 1."""
    out = np.zeros_like(s)
    inside = s < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si))
    return out


class ChartBumpMap:
    """Compactly supported displacement in the chart at infinity.

    Acts as y -> y + sum_m amp_m * psi(|y - c_m|^2 / r_m^2) on chart
    coordinates and as the identity outside the supports, hence extends to a
    smooth diffeomorphism of the sphere.  The profile depends on the squared
    radius, so the displacement differential vanishes at every bump center.
    The total Lipschitz constant of the displacement must stay below 1/2,
    which also makes the inverse a plain fixed-point iteration.
    """

    __slots__ = ("centers", "radii", "amps", "support_max")

    def __init__(self, centers, radii, amps):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.radii = np.atleast_1d(np.asarray(radii, dtype=float))
        self.amps = np.atleast_2d(np.asarray(amps, dtype=float))
        m = self.centers.shape[0]
        if self.radii.shape != (m,) or self.amps.shape != self.centers.shape:
            raise ValueError("centers, radii and amps must have matching shapes")
        if np.any(self.radii <= 0):
            raise ValueError("bump radii must be positive")
        reach = np.linalg.norm(self.centers, axis=1) + self.radii
        self.support_max = float(np.max(reach)) if m else 0.0
        if self.support_max >= 0.95:
            raise ValueError(
                f"bump supports must stay inside the unit chart ball "
                f"(max reach {self.support_max:.3f})"
            )
        if self.lipschitz() >= 0.5:
            raise ValueError(
                f"displacement Lipschitz bound {self.lipschitz():.3f} "
                "exceeds 1/2"
            )

    def lipschitz(self) -> float:
        amp_norms = np.linalg.norm(self.amps, axis=1)
        return float(np.sum(amp_norms * BUMP_LIP_CONST / self.radii))

    def displacement(self, Y: np.ndarray) -> np.ndarray:
        out = np.zeros_like(Y)
        for c, r, u in zip(self.centers, self.radii, self.amps):
            d2 = np.sum((Y - c) ** 2, axis=1)
            out += _bump_profile(d2 / (r * r))[:, None] * u
        return out

    def _split(self, batch: PointBatch):
        """Rows the bump can move (as chart coordinates) and untouched rows."""
        coords, in_chart = batch.coords, batch.in_chart
        norms = np.linalg.norm(coords, axis=1)
        active = in_chart.copy()
        # affine rows far enough out sit inside the chart support
        far_affine = (~in_chart) & (norms * self.support_max >= 1.0)
        active |= far_affine
        Y = coords[active].copy()
        if far_affine.any():
            conv = far_affine[active]
            Y[conv] = phi_bar(coords[active][conv])
        return active, Y

    def apply(self, p):
        batch, single = _as_batch(p)
        coords = batch.coords.copy()
        in_chart = batch.in_chart.copy()
        active, Y = self._split(batch)
        if active.any():
            coords[active] = Y + self.displacement(Y)
            in_chart[active] = True
        out = PointBatch(coords, in_chart).rebalanced()
        return out.point(0) if single else out

    def apply_inverse(self, p, max_iter: int = 100):
        batch, single = _as_batch(p)
        coords = batch.coords.copy()
        in_chart = batch.in_chart.copy()
        active, W = self._split(batch)
        if active.any():
            Y = W.copy()
            for _ in range(max_iter):
                Y_next = W - self.displacement(Y)
                step = np.max(np.linalg.norm(Y_next - Y, axis=1))
                Y = Y_next
                if step <= 1e-17:
                    break
            coords[active] = Y
            in_chart[active] = True
        out = PointBatch(coords, in_chart).rebalanced()
        return out.point(0) if single else out


class SphereMapChain:
    """Composition of sphere maps; pieces apply in list order."""

    __slots__ = ("pieces",)

    def __init__(self, pieces):
        self.pieces = list(pieces)

    def apply(self, p):
        for piece in self.pieces:
            p = piece.apply(p)
        return p

    def apply_inverse(self, p):
        for piece in reversed(self.pieces):
            p = piece.apply_inverse(p)
        return p


@dataclass(frozen=True)
class ActionSpec:
    """Parameters of a standard action: dimension, dilation factor, basis."""

    n: int
    k: int
    basis: BasisMatrix

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("n must be >= 2 (the circle case is out of scope)")
        if int(self.k) != self.k or self.k < 2:
            raise ValueError("k must be an integer >= 2")
        if self.basis.dim != self.n:
            raise ValueError(
                f"basis dimension {self.basis.dim} does not match n={self.n}"
            )

    def generator_names(self) -> list:
        return ["a"] + [f"b{i + 1}" for i in range(self.n)]


def _parse_generator(spec: ActionSpec, gen: str) -> int:
    """Return -1 for the dilation generator, else the 0-based translation index."""
    if gen == "a":
        return -1
    if gen.startswith("b"):
        idx = int(gen[1:]) - 1
        if 0 <= idx < spec.n:
            return idx
    raise ValueError(f"unknown generator {gen!r} for n={spec.n}")


class StandardAction:
    """The conformal action: a acts by x -> kx, b_i by x -> x + v_i."""

    def __init__(self, spec: ActionSpec):
        self.spec = spec

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def k(self) -> int:
        return self.spec.k

    def generator_names(self) -> list:
        return self.spec.generator_names()

    def _affine_for(self, gen: str, exponent: int) -> AffineSphereMap:
        idx = _parse_generator(self.spec, gen)
        n, k = self.spec.n, self.spec.k
        if idx < 0:
            return AffineSphereMap(float(k) ** exponent * np.eye(n))
        return AffineSphereMap(np.eye(n), exponent * self.spec.basis.column(idx))

    def word_affine(self, word) -> AffineSphereMap:
        """Collapse a word to the affine map it acts by (rightmost acts first)."""
        total = AffineSphereMap(np.eye(self.spec.n))
        for gen, exp in word:
            total = total.compose_after(self._affine_for(gen, exp))
        return total

    def apply(self, gen: str, p, exponent: int = 1):
        return self._affine_for(gen, exponent).apply(p)

    def apply_word(self, word, p):
        return self.word_affine(word).apply(p)

    def apply_generator_power(self, gen: str, exponents, p):
        """Apply b_i^{m} with a per-row integer exponent vector."""
        idx = _parse_generator(self.spec, gen)
        if idx < 0:
            raise ValueError("per-row powers are supported for translations only")
        batch, single = _as_batch(p)
        exponents = np.asarray(exponents, dtype=float)
        W = exponents[:, None] * self.spec.basis.column(idx)
        n = self.spec.n
        coords, in_chart = _apply_affine(
            batch.coords, batch.in_chart, np.eye(n), W
        )
        out = PointBatch(coords, in_chart).rebalanced()
        return out.point(0) if single else out


def word_inverse(word) -> list:
    return [(gen, -exp) for gen, exp in reversed(word)]


def relation_words(n: int, k: int):
    """Defining relations as (name, lhs, rhs) word pairs."""
    out = []
    for i in range(1, n + 1):
        out.append((
            f"a b{i} a^-1 = b{i}^{k}",
            [("a", 1), (f"b{i}", 1), ("a", -1)],
            [(f"b{i}", k)],
        ))
    for i in range(1, n + 1):
        for j in range(i + 1, n + 1):
            out.append((
                f"b{i} b{j} = b{j} b{i}",
                [(f"b{i}", 1), (f"b{j}", 1)],
                [(f"b{j}", 1), (f"b{i}", 1)],
            ))
    return out


def _apply_word_tokenwise(action, word, batch: PointBatch) -> PointBatch:
    """Apply a word one unit generator step at a time, rightmost first."""
    for gen, exp in reversed(word):
        step = 1 if exp > 0 else -1
        for _ in range(abs(exp)):
            batch = action.apply(gen, batch, exponent=step)
    return batch


@dataclass
class RelationReport:
    max_deviation: float
    per_relation: dict
    n_samples: int

    def to_dict(self) -> dict:
        return {
            "max_deviation": self.max_deviation,
            "per_relation": self.per_relation,
            "n_samples": self.n_samples,
        }


def verify_relations(action, rng=None, n_samples: int = 100,
                     include_infinity: bool = True) -> RelationReport:
    """Evaluate both sides of every defining relation on random sample points.

    Words are applied one generator step at a time, so the check exercises
    actual compositions rather than any collapsed form the action may use
    internally.  Samples mix moderate affine points, large affine points and
    chart points near infinity; the point at infinity itself is included by
    default.  Deviations are chordal distances.
    """
    rng = np.random.default_rng(rng)
    n, k = action.n, action.k
    coords = []
    flags = []
    for _ in range(n_samples):
        u = rng.uniform()
        if u < 0.6:
            coords.append(rng.standard_normal(n) * 2.0)
            flags.append(False)
        elif u < 0.8:
            coords.append(rng.standard_normal(n) * 8.0)
            flags.append(False)
        else:
            coords.append(rng.standard_normal(n) * 0.2)
            flags.append(True)
    if include_infinity:
        coords.append(np.zeros(n))
        flags.append(True)
    batch = PointBatch(np.array(coords), np.array(flags))

    per_relation = {}
    worst = 0.0
    for name, lhs, rhs in relation_words(n, k):
        left = _apply_word_tokenwise(action, lhs, batch)
        right = _apply_word_tokenwise(action, rhs, batch)
        dev = float(np.max(sphere_distance(left, right)))
        per_relation[name] = dev
        worst = max(worst, dev)
    return RelationReport(worst, per_relation, batch.size)


def translation_chart_jet(v) -> Jet3:
    """Order-3 jet at 0 of the translation by v seen in the inversion chart.

    The chart-conjugated translation has the closed form
    y -> (y + |y|^2 v) / (1 + 2 <y, v> + |y|^2 |v|^2); its jet has identity
    linear part, quadratic part 2 Q_v, and the cubic part below, obtained by
    expanding the closed form (and cross-checked against the time-1 flow of
    the quadratic field Q_v(x, x), which has the same germ).
    """
    v = np.asarray(v, dtype=float)
    n = v.size
    E = np.eye(n)
    t1 = (
        np.einsum("i,j,ok->oijk", v, v, E)
        + np.einsum("j,k,oi->oijk", v, v, E)
        + np.einsum("k,i,oj->oijk", v, v, E)
    )
    t2 = (
        np.einsum("ij,ok->oijk", E, E)
        + np.einsum("jk,oi->oijk", E, E)
        + np.einsum("ki,oj->oijk", E, E)
    )
    t3 = (
        np.einsum("i,jk,o->oijk", v, E, v)
        + np.einsum("j,ki,o->oijk", v, E, v)
        + np.einsum("k,ij,o->oijk", v, E, v)
    )
    cubic = 8.0 * t1 - 2.0 * float(v @ v) * t2 - 4.0 * t3
    quad = 2.0 * make_Q(v)
    return Jet3(np.eye(n), quad,
                SymMultiMap.from_dense(cubic, symmetrize=False), check=False)


def local_jet(spec: ActionSpec, gen: str, exponent: int = 1) -> Jet3:
    """Order-3 jet at the chart origin of the chart-conjugated generator map."""
    idx = _parse_generator(spec, gen)
    if idx < 0:
        return scaling_jet(spec.n, float(spec.k) ** (-exponent))
    return translation_chart_jet(exponent * spec.basis.column(idx))


class Chart:
    """Coordinate chart q -> chart(q) - chart(p) centered at a point near
    infinity; the center maps to 0 and the chart at infinity itself is the
    plain inversion chart."""

    __slots__ = ("center_chart",)

    def __init__(self, center_chart):
        self.center_chart = np.asarray(center_chart, dtype=float).copy()

    @property
    def dim(self) -> int:
        return self.center_chart.size

    def forward(self, p) -> np.ndarray:
        batch, single = _as_batch(p)
        Z = batch.chart() - self.center_chart
        return Z[0] if single else Z

    def inverse(self, Z):
        Z = np.asarray(Z, dtype=float)
        single = Z.ndim == 1
        Zb = np.atleast_2d(Z)
        out = PointBatch(Zb + self.center_chart,
                         np.ones(Zb.shape[0], dtype=bool)).rebalanced()
        return out.point(0) if single else out


def chart_at(p: SpherePoint, max_center_norm: float = 0.75) -> Chart:
    """Chart centered at a point in the chart domain around infinity."""
    y0 = p.chart()
    if np.linalg.norm(y0) > max_center_norm:
        raise ValueError(
            f"point lies outside the chart domain "
            f"(chart norm {np.linalg.norm(y0):.3f} > {max_center_norm})"
        )
    return Chart(y0)
