"""Order-3 jet calculus for germs of diffeomorphisms of R^n fixing 0.

A ``Jet3`` holds the first three derivatives at the origin of such a germ:
an invertible matrix and symmetric bilinear/trilinear maps.  Composition
follows the chain rule truncated at order 3, which makes the set of jets a
group; everything here (inversion, conjugation, flows of quadratic vector
fields, scalar linearization) is built from that single operation.

Derivatives, not Taylor coefficients, are stored: the polynomial
representative of a jet is x -> Lx + Q(x,x)/2 + C(x,x,x)/6.
"""

from __future__ import annotations

import numpy as np

from .symtensor import SymMultiMap, cyclic_compose, op_norm

__all__ = [
    "Jet3",
    "identity_jet",
    "scaling_jet",
    "linear_jet",
    "compose",
    "invert",
    "conjugate",
    "jet_power",
    "theta",
    "quad_flow_jet",
    "linearize",
    "jet_distance",
    "jet_deviation",
]


def _as_sym(value, dim: int, order: int) -> SymMultiMap:
    if isinstance(value, SymMultiMap):
        if value.dim != dim or value.order != order:
            raise ValueError(
                f"part has order/dim ({value.order},{value.dim}), "
                f"expected ({order},{dim})"
            )
        return value
    return SymMultiMap.from_dense(np.asarray(value, dtype=float))


class Jet3:
    """3-jet at the origin of a local diffeomorphism fixing 0.

    Parts are the derivatives D^(1), D^(2), D^(3) at 0; the linear part must
    be invertible.  Instances are immutable.
    """

    __slots__ = ("dim", "linear", "quadratic", "cubic")

    def __init__(self, linear, quadratic=None, cubic=None, check: bool = True):
        lin = np.asarray(
            linear.coeffs if isinstance(linear, SymMultiMap) else linear,
            dtype=float,
        )
        if lin.ndim != 2 or lin.shape[0] != lin.shape[1]:
            raise ValueError(f"linear part must be a square matrix, got {lin.shape}")
        n = lin.shape[0]
        if check:
            sv = np.linalg.svd(lin, compute_uv=False)
            if sv[-1] <= 1e-12 * max(sv[0], 1.0):
                raise ValueError("linear part is numerically singular")
        self.dim = n
        self.linear = SymMultiMap(1, n, lin)
        self.quadratic = (
            SymMultiMap.zeros(n, 2) if quadratic is None else _as_sym(quadratic, n, 2)
        )
        self.cubic = (
            SymMultiMap.zeros(n, 3) if cubic is None else _as_sym(cubic, n, 3)
        )

    # dense accessors used by the composition formulas
    @property
    def L(self) -> np.ndarray:
        return self.linear.coeffs

    @property
    def Qd(self) -> np.ndarray:
        return self.quadratic.dense

    @property
    def Cd(self) -> np.ndarray:
        return self.cubic.dense

    def __call__(self, x) -> np.ndarray:
        """Evaluate the cubic polynomial representative on (..., n) points."""
        x = np.asarray(x, dtype=float)
        val = x @ self.L.T
        val = val + 0.5 * np.einsum("oij,...i,...j->...o", self.Qd, x, x)
        val = val + (1.0 / 6.0) * np.einsum(
            "oijk,...i,...j,...k->...o", self.Cd, x, x, x
        )
        return val

    def __repr__(self) -> str:
        return f"Jet3(dim={self.dim})"


def identity_jet(n: int) -> Jet3:
    return Jet3(np.eye(n))


def scaling_jet(n: int, alpha: float) -> Jet3:
    """Jet of x -> alpha x; alpha must be nonzero."""
    if alpha == 0:
        raise ValueError("scaling factor must be nonzero")
    return Jet3(alpha * np.eye(n))


def linear_jet(A) -> Jet3:
    """Jet of an invertible linear map."""
    return Jet3(np.asarray(A, dtype=float))


def _check_dims(F: Jet3, G: Jet3) -> None:
    if F.dim != G.dim:
        raise ValueError(f"dimension mismatch: {F.dim} vs {G.dim}")


def compose(F: Jet3, G: Jet3) -> Jet3:
    """3-jet of F o G (chain rule truncated at order 3)."""
    _check_dims(F, G)
    L = F.L @ G.L
    Q = np.einsum("om,mij->oij", F.L, G.Qd) + np.einsum(
        "oab,ai,bj->oij", F.Qd, G.L, G.L
    )
    mixed = np.einsum("oab,ai,bjk->oijk", F.Qd, G.L, G.Qd)
    C = (
        np.einsum("om,mijk->oijk", F.L, G.Cd)
        + mixed
        + np.einsum("ojki->oijk", mixed)
        + np.einsum("okij->oijk", mixed)
        + np.einsum("oabc,ai,bj,ck->oijk", F.Cd, G.L, G.L, G.L)
    )
    return Jet3(L, SymMultiMap.from_dense(Q, symmetrize=False),
                SymMultiMap.from_dense(C, symmetrize=False), check=False)


def invert(F: Jet3) -> Jet3:
    """3-jet of the inverse germ; compose(F, invert(F)) is the identity jet."""
    M = np.linalg.inv(F.L)
    N = -np.einsum("om,mab,ai,bj->oij", M, F.Qd, M, M)
    mixed = np.einsum("oab,ai,bjk->oijk", F.Qd, M, N)
    inner = (
        mixed
        + np.einsum("ojki->oijk", mixed)
        + np.einsum("okij->oijk", mixed)
        + np.einsum("oabc,ai,bj,ck->oijk", F.Cd, M, M, M)
    )
    P = -np.einsum("om,mijk->oijk", M, inner)
    return Jet3(M, SymMultiMap.from_dense(N, symmetrize=False),
                SymMultiMap.from_dense(P, symmetrize=False), check=False)


def conjugate(F: Jet3, H: Jet3) -> Jet3:
    """3-jet of H o F o H^{-1}."""
    return compose(H, compose(F, invert(H)))


def jet_power(G: Jet3, m: int) -> Jet3:
    """3-jet of the m-fold composition of G with itself (m >= 0)."""
    if m < 0:
        raise ValueError("power must be nonnegative")
    out = identity_jet(G.dim)
    for _ in range(m):
        out = compose(out, G)
    return out


def theta(G: Jet3, tol: float = 1e-9) -> SymMultiMap:
    """Half the quadratic part of a jet with identity linear part."""
    dev = np.max(np.abs(G.L - np.eye(G.dim)))
    if dev > tol:
        raise ValueError(
            f"theta requires identity linear part (deviation {dev:.3e})"
        )
    return 0.5 * G.quadratic


def quad_flow_jet(Q: SymMultiMap, t: float, n_picard: int = 3) -> Jet3:
    """3-jet of the time-t flow of the quadratic vector field x -> Q(x, x).

    Computed by Picard iteration on the jet-coefficient ODE with polynomial
    coefficients in t; three iterations are stationary at this truncation
    order.  The linear part is the identity and the quadratic part is 2 t Q.
    """
    if Q.order != 2:
        raise ValueError("quad_flow_jet requires an order-2 map")
    n = Q.dim
    Qd = Q.dense
    # Taylor coefficient maps of the jet as polynomials in t:
    # T2[p], T3[p] multiply t**p.
    T2: dict = {}
    T3: dict = {}
    for _ in range(n_picard):
        new_T2 = {1: Qd}
        new_T3 = {}
        for p, M in T2.items():
            # cubic Taylor coefficient of Q(G_t(x), G_t(x)) from the cross term
            contrib = (2.0 / 3.0) * cyclic_compose(Qd, M)
            new_T3[p + 1] = new_T3.get(p + 1, 0.0) + contrib / (p + 1)
        T2, T3 = new_T2, new_T3
    quad = 2.0 * sum((t**p) * M for p, M in T2.items())
    cub = 6.0 * sum((t**p) * M for p, M in T3.items())
    if isinstance(cub, float):
        cub = np.zeros((n,) * 4)
    return Jet3(np.eye(n), SymMultiMap.from_dense(quad, symmetrize=False),
                SymMultiMap.from_dense(cub, symmetrize=False), check=False)


def linearize(F: Jet3, scalar_tol: float = 1e-8) -> Jet3:
    """Solve for H with identity linear part conjugating F to its scaling.

    F must have linear part alpha I with 0 < alpha < 1 (deviations below
    ``scalar_tol`` are projected onto the scalar).  The quadratic and cubic
    homological equations have the unique solutions

        H2 = F2 / (alpha - alpha^2),
        H3 = (F3 + alpha * T(H2, F2)) / (alpha - alpha^3),

    with T the cyclic plug-in, and conjugate(F, H) is the pure scaling jet
    up to the truncation order.
    """
    n = F.dim
    alpha = float(np.trace(F.L)) / n
    dev = np.max(np.abs(F.L - alpha * np.eye(n)))
    if dev > scalar_tol * max(abs(alpha), 1.0):
        raise ValueError(
            f"linear part is not scalar (deviation {dev:.3e})"
        )
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"scaling factor must lie in (0, 1), got {alpha}")
    H2 = F.Qd / (alpha - alpha**2)
    H3 = (F.Cd + alpha * cyclic_compose(H2, F.Qd)) / (alpha - alpha**3)
    return Jet3(np.eye(n), SymMultiMap.from_dense(H2, symmetrize=False),
                SymMultiMap.from_dense(H3, symmetrize=False), check=False)


def jet_distance(F: Jet3, G: Jet3, r: int = 3) -> float:
    """Pseudo-distance: sum over orders i <= r of operator norms of the
    derivative differences.

    The order-1 term is the exact spectral norm; orders 2 and 3 use the
    coefficient-sum upper bound of :func:`op_norm`, so the value dominates
    the true pseudo-distance and vanishes exactly when the jets agree up to
    order r.
    """
    _check_dims(F, G)
    if r not in (1, 2, 3):
        raise ValueError("order must be 1, 2 or 3")
    total = float(np.linalg.svd(F.L - G.L, compute_uv=False)[0])
    if r >= 2:
        total += op_norm(F.quadratic - G.quadratic, n_samples=0)[1]
    if r >= 3:
        total += op_norm(F.cubic - G.cubic, n_samples=0)[1]
    return total


def jet_deviation(F: Jet3, G: Jet3) -> float:
    """Max absolute coefficient difference across all three parts."""
    _check_dims(F, G)
    return max(
        float(np.max(np.abs(F.L - G.L))),
        float(np.max(np.abs(F.quadratic.coeffs - G.quadratic.coeffs))),
        float(np.max(np.abs(F.cubic.coeffs - G.cubic.coeffs))),
    )
