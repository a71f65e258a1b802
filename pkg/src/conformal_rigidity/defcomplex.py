"""Linearized deformation operators and numerical exactness certification.

The two-step complex lives on three coordinate spaces: pairs of n x n
matrices (dimension 2 n^2), n-tuples of symmetric bilinear maps, and
(n(n-1)/2)-tuples of symmetric trilinear maps.  For a basis B = (v_1..v_n)
the linearized operators are

    LPhi(A', B') = ( A' Q_{v_i} - Q_{v_i}(A'., .) - Q_{v_i}(., A'.)
                     + Q_{omega_i} )_i ,     B' = (omega_1..omega_n),
    LPsi(q_1..q_n) = ( [q_i, Q_{v_j}] - [q_j, Q_{v_i}] )_{i<j} ,

and the certified claim is that the kernel of LPsi equals the image of
LPhi, for every invertible B.  Certification is by SVD rank counts plus an
explicit projection residual of an orthonormal kernel basis onto the image.

Flattening follows :mod:`conformal_rigidity.symtensor`: tuple index major,
then output coordinate, then lexicographic multi-index.  Matrix directions
(A', B') are flattened row major, A' entries first.

The constraint slice used for the transversality check is defined at B = I
by q_j(e_j, e_j) = 0 (all j), <e_i, q_j(e_i, e_i)> + <e_j, q_i(e_j, e_j)> = 0
(i < j), and <e_1, q_1(e_j, e_j)> = 0 (j >= 2); general bases reduce to I by
the kernel transport (q_1..q_n) -> (sum_k a_{k1} q_k, ..).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import subspace_angles

from .jets import compose, conjugate, jet_power, linear_jet, scaling_jet
from .mobius import translation_chart_jet
from .symtensor import (
    BasisMatrix,
    SymMultiMap,
    bracket,
    flatten_maps,
    make_Q,
    sym_dim,
)

__all__ = [
    "build_LPhi",
    "build_LPsi",
    "apply_LPhi",
    "DeformationOperators",
    "build_operators",
    "ExactnessReport",
    "exactness_report",
    "SubspaceW",
    "build_W",
    "project_to_W",
    "TransversalityReport",
    "verify_transversality",
    "ChangeBasisReport",
    "change_basis_kernel",
    "nonlinear_Phi",
    "nonlinear_Psi",
    "kernel_basis",
    "tuple_transport",
]

_bracket_structure_cache: dict = {}


def _bracket_structure(n: int) -> np.ndarray:
    """Structure array S with S[:, a, b] = vec([basis_a, basis_b]) for the
    coordinate bases of the bilinear space; cached per dimension."""
    if n not in _bracket_structure_cache:
        d2 = sym_dim(n, 2)
        d3 = sym_dim(n, 3)
        basis = [
            SymMultiMap.from_vector(n, 2, np.eye(d2)[a]) for a in range(d2)
        ]
        S = np.empty((d3, d2, d2))
        for a in range(d2):
            for b in range(d2):
                S[:, a, b] = bracket(basis[a], basis[b]).to_vector()
        S.setflags(write=False)
        _bracket_structure_cache[n] = S
    return _bracket_structure_cache[n]


def apply_LPhi(B: BasisMatrix, A: np.ndarray, Bp: np.ndarray) -> list:
    """Evaluate the first operator on a matrix pair, returning the n-tuple of
    symmetric bilinear maps."""
    n = B.dim
    A = np.asarray(A, dtype=float)
    Bp = np.asarray(Bp, dtype=float)
    out = []
    for i in range(n):
        Qd = make_Q(B.column(i)).dense
        dense = (
            np.einsum("om,mij->oij", A, Qd)
            - np.einsum("oaj,ai->oij", Qd, A)
            - np.einsum("oib,bj->oij", Qd, A)
            + make_Q(Bp[:, i]).dense
        )
        out.append(SymMultiMap.from_dense(dense, symmetrize=False))
    return out


def build_LPhi(B: BasisMatrix) -> np.ndarray:
    """Matrix of the first operator: (2 n^2 columns) -> n-tuple coordinates."""
    n = B.dim
    total2 = n * sym_dim(n, 2)
    cols = np.empty((total2, 2 * n * n))
    col = 0
    for r in range(n):
        for s in range(n):
            E = np.zeros((n, n))
            E[r, s] = 1.0
            cols[:, col] = flatten_maps(apply_LPhi(B, E, np.zeros((n, n))))
            col += 1
    for r in range(n):
        for s in range(n):
            E = np.zeros((n, n))
            E[r, s] = 1.0
            cols[:, col] = flatten_maps(apply_LPhi(B, np.zeros((n, n)), E))
            col += 1
    return cols


def build_LPsi(B: BasisMatrix) -> np.ndarray:
    """Matrix of the second operator on flattened n-tuples of bilinear maps.

    Output blocks are ordered lexicographically in the pair (i, j), i < j.
    """
    n = B.dim
    d2 = sym_dim(n, 2)
    d3 = sym_dim(n, 3)
    S = _bracket_structure(n)
    # bracket_op[j] maps vec(q) to vec([q, Q_{v_j}])
    bracket_op = [
        np.einsum("dab,b->da", S, make_Q(B.column(j)).to_vector())
        for j in range(n)
    ]
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    out = np.zeros((len(pairs) * d3, n * d2))
    for row, (i, j) in enumerate(pairs):
        rows = slice(row * d3, (row + 1) * d3)
        out[rows, i * d2:(i + 1) * d2] += bracket_op[j]
        out[rows, j * d2:(j + 1) * d2] -= bracket_op[i]
    return out


@dataclass
class DeformationOperators:
    """The assembled operator pair for one basis, plus the flattening tag."""

    n: int
    basis: BasisMatrix
    phi_matrix: np.ndarray
    psi_matrix: np.ndarray
    flatten_convention: str = "tuple-major/output-major/lex-multi-index"

    def composite_residual(self) -> float:
        """Relative Frobenius norm of LPsi @ LPhi (zero for a complex)."""
        num = np.linalg.norm(self.psi_matrix @ self.phi_matrix)
        den = np.linalg.norm(self.psi_matrix) * np.linalg.norm(self.phi_matrix)
        return float(num / den) if den else 0.0


def build_operators(B: BasisMatrix) -> DeformationOperators:
    return DeformationOperators(B.dim, B, build_LPhi(B), build_LPsi(B))


def kernel_basis(M: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Orthonormal nullspace basis (columns) via SVD; singular values below
    tol * sigma_max count as zero."""
    # all right singular vectors are needed; the economy factorization has
    # them whenever the matrix is at least as tall as it is wide
    _, s, vh = np.linalg.svd(M, full_matrices=M.shape[0] < M.shape[1])
    cutoff = tol * (s[0] if s.size else 0.0)
    rank = int(np.sum(s > cutoff))
    return vh[rank:].T


@dataclass
class ExactnessReport:
    n: int
    rank_phi: int
    rank_psi: int
    nullity_psi: int
    dim_ker_phi: int
    max_subspace_residual: float
    composite_residual: float
    exact: bool
    rank_tol: float
    residual_tol: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "rank_phi": self.rank_phi,
            "rank_psi": self.rank_psi,
            "nullity_psi": self.nullity_psi,
            "dim_ker_phi": self.dim_ker_phi,
            "max_subspace_residual": self.max_subspace_residual,
            "composite_residual": self.composite_residual,
            "exact": self.exact,
            "rank_tol": self.rank_tol,
            "residual_tol": self.residual_tol,
        }


def exactness_report(B: BasisMatrix, rank_tol: float = 1e-9,
                     residual_tol: float = 1e-8,
                     operators: DeformationOperators | None = None) -> ExactnessReport:
    """Certify kernel(LPsi) = image(LPhi) for one basis.

    Both directions are checked: the composite LPsi @ LPhi must vanish
    relative to the factors (image inside kernel), and an orthonormal kernel
    basis of LPsi must project onto the column space of LPhi with residual
    below ``residual_tol`` while the rank of LPhi matches the nullity of
    LPsi (kernel inside image).
    """
    ops = operators if operators is not None else build_operators(B)
    phi, psi = ops.phi_matrix, ops.psi_matrix

    u_phi, s_phi, _ = np.linalg.svd(phi, full_matrices=False)
    rank_phi = int(np.sum(s_phi > rank_tol * s_phi[0]))
    col_space = u_phi[:, :rank_phi]

    _, s_psi, vh_psi = np.linalg.svd(
        psi, full_matrices=psi.shape[0] < psi.shape[1]
    )
    rank_psi = int(np.sum(s_psi > rank_tol * s_psi[0]))
    ker = vh_psi[rank_psi:].T
    nullity_psi = ker.shape[1]

    if nullity_psi:
        resid_vecs = ker - col_space @ (col_space.T @ ker)
        max_resid = float(np.max(np.linalg.norm(resid_vecs, axis=0)))
    else:
        max_resid = 0.0
    composite = ops.composite_residual()
    exact = (rank_phi == nullity_psi) and (max_resid <= residual_tol)
    return ExactnessReport(
        n=B.dim,
        rank_phi=rank_phi,
        rank_psi=rank_psi,
        nullity_psi=nullity_psi,
        dim_ker_phi=2 * B.dim * B.dim - rank_phi,
        max_subspace_residual=max_resid,
        composite_residual=composite,
        exact=exact,
        rank_tol=rank_tol,
        residual_tol=residual_tol,
    )


@dataclass
class SubspaceW:
    """Constraint slice of n-tuples of bilinear maps, defined at the identity
    basis.  Rows of ``constraint_matrix`` are the scalar constraints: n^2
    from the vector equations q_j(e_j, e_j) = 0, n(n-1)/2 symmetric-pair
    equations (emitted for i < j only; the i = j instances repeat earlier
    rows), and n - 1 first-coordinate equations for j >= 2.  The matrix has
    full row rank by construction (verified at build time)."""

    n: int
    constraint_matrix: np.ndarray
    row_labels: list = field(default_factory=list)

    @property
    def n_constraints(self) -> int:
        return self.constraint_matrix.shape[0]

    def residuals(self, q_tuple) -> np.ndarray:
        return self.constraint_matrix @ flatten_maps(q_tuple)

    def basis(self, tol: float = 1e-9) -> np.ndarray:
        return kernel_basis(self.constraint_matrix, tol)


def _coeff_position(n: int, block: int, out: int, i: int, j: int) -> int:
    """Flat position of <e_out, q_block(e_i, e_j)> in the tuple coordinates."""
    from .symtensor import _index_table

    d2 = sym_dim(n, 2)
    _, slot_of, _, _ = _index_table(n, 2)
    slot = slot_of[tuple(sorted((i, j)))]
    per_row = d2 // n
    return block * d2 + out * per_row + slot


def build_W(n: int) -> SubspaceW:
    rows = []
    labels = []
    d_total = n * sym_dim(n, 2)
    for j in range(n):
        for out in range(n):
            row = np.zeros(d_total)
            row[_coeff_position(n, j, out, j, j)] = 1.0
            rows.append(row)
            labels.append(f"H1: <e{out + 1}, q{j + 1}(e{j + 1}, e{j + 1})> = 0")
    for i in range(n):
        for j in range(i + 1, n):
            row = np.zeros(d_total)
            row[_coeff_position(n, j, i, i, i)] += 1.0
            row[_coeff_position(n, i, j, j, j)] += 1.0
            rows.append(row)
            labels.append(f"H2: pair ({i + 1}, {j + 1})")
    for j in range(1, n):
        row = np.zeros(d_total)
        row[_coeff_position(n, 0, 0, j, j)] = 1.0
        rows.append(row)
        labels.append(f"H3: <e1, q1(e{j + 1}, e{j + 1})> = 0")
    matrix = np.array(rows)
    expected = n * n + n * (n - 1) // 2 + (n - 1)
    if matrix.shape[0] != expected:
        raise AssertionError("constraint row count mismatch")
    if np.linalg.matrix_rank(matrix) != expected:
        raise AssertionError("constraint matrix is rank deficient")
    return SubspaceW(n, matrix, labels)


def project_to_W(q_tuple) -> tuple:
    """Matrix pair (A, B') whose operator image matches the given tuple on
    every slice constraint, so the remainder q - LPhi_I(A, B') lies in the
    slice.

    Built from the diagonal evaluations s_ij = <e_i, q_j(e_j, e_j)>,
    t_ij = <e_j, q_i(e_j, e_j)> and u_j = <e_1, q_1(e_j, e_j)>:
    a_11 = s_11 / 2 and b_11 = -s_11 / 2; a_jj = -u_j / 2 and
    b_jj = -s_jj - u_j / 2 for j >= 2; off the diagonal
    a_ij = (s_ij + t_ij) / 4 and b_ij = (3 s_ij - t_ij) / 4.
    """
    n = q_tuple[0].dim
    dense = [q.dense for q in q_tuple]
    s = np.empty((n, n))
    t = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            s[i, j] = dense[j][i, j, j]
            t[i, j] = dense[i][j, j, j]
    u = np.array([dense[0][0, j, j] for j in range(n)])

    A = np.empty((n, n))
    Bp = np.empty((n, n))
    A[0, 0] = s[0, 0] / 2.0
    Bp[0, 0] = -s[0, 0] / 2.0
    for j in range(1, n):
        A[j, j] = -u[j] / 2.0
        Bp[j, j] = -s[j, j] - u[j] / 2.0
    for i in range(n):
        for j in range(n):
            if i != j:
                A[i, j] = (s[i, j] + t[i, j]) / 4.0
                Bp[i, j] = (3.0 * s[i, j] - t[i, j]) / 4.0
    return A, Bp


def tuple_transport(A: np.ndarray, d: int) -> np.ndarray:
    """Matrix of (q_1..q_n) -> (sum_k a_{k1} q_k, ..., sum_k a_{kn} q_k) on
    flattened tuples with block size d."""
    return np.kron(np.asarray(A, dtype=float).T, np.eye(d))


@dataclass
class TransversalityReport:
    n: int
    kernel_meets_W: bool
    sum_spans: bool
    min_intersection_sv: float
    sum_rank: int
    full_dim: int

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "kernel_meets_W": self.kernel_meets_W,
            "sum_spans": self.sum_spans,
            "min_intersection_sv": self.min_intersection_sv,
            "sum_rank": self.sum_rank,
            "full_dim": self.full_dim,
        }


def verify_transversality(B: BasisMatrix, tol: float = 1e-6,
                          rank_tol: float = 1e-9,
                          W: SubspaceW | None = None) -> TransversalityReport:
    """Check kernel(LPsi_I) meets the slice only at 0 and that slice + image
    span everything.

    The kernel for a general basis is transported to the identity frame by
    the tuple action of B^{-1} first.  The intersection test normalizes the
    constraint rows and takes an orthonormal kernel basis K: the kernel
    misses the slice iff the stacked system C_norm @ K has full column rank,
    measured by its smallest singular value against ``tol``.
    """
    n = B.dim
    d2 = sym_dim(n, 2)
    W = W if W is not None else build_W(n)

    ker_B = kernel_basis(build_LPsi(B), rank_tol)
    transport = tuple_transport(np.linalg.inv(B.matrix), d2)
    ker_I = np.linalg.qr(transport @ ker_B)[0]

    C = W.constraint_matrix
    if C.shape[0] == 0:
        # degenerate slice equal to the whole space
        min_sv = 0.0 if ker_I.shape[1] else np.inf
    else:
        C_norm = C / np.linalg.norm(C, axis=1, keepdims=True)
        system = C_norm @ ker_I
        sv = np.linalg.svd(system, compute_uv=False)
        min_sv = float(sv[-1]) if ker_I.shape[1] else np.inf
    kernel_meets_W = bool(min_sv < tol)

    phi_I = build_LPhi(BasisMatrix.identity(n))
    u, sp, _ = np.linalg.svd(phi_I, full_matrices=False)
    rank_phi = int(np.sum(sp > rank_tol * sp[0]))
    stacked = np.hstack([W.basis(rank_tol), u[:, :rank_phi]])
    sum_rank = int(np.linalg.matrix_rank(stacked, tol=rank_tol * 10))
    full_dim = n * d2
    return TransversalityReport(
        n=n,
        kernel_meets_W=kernel_meets_W,
        sum_spans=bool(sum_rank == full_dim),
        min_intersection_sv=min_sv,
        sum_rank=sum_rank,
        full_dim=full_dim,
    )


@dataclass
class ChangeBasisReport:
    n: int
    max_principal_angle: float
    kernel_dim_base: int
    kernel_dim_new: int
    consistent: bool

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "max_principal_angle": self.max_principal_angle,
            "kernel_dim_base": self.kernel_dim_base,
            "kernel_dim_new": self.kernel_dim_new,
            "consistent": self.consistent,
        }


def change_basis_kernel(B: BasisMatrix, Bp: BasisMatrix, A: np.ndarray,
                        tol: float = 1e-8,
                        rank_tol: float = 1e-9) -> ChangeBasisReport:
    """Check that the tuple action of A maps kernel(LPsi_B) onto
    kernel(LPsi_{BA}); requires Bp = B A."""
    A = np.asarray(A, dtype=float)
    if np.max(np.abs(Bp.matrix - B.matrix @ A)) > 1e-9 * max(
        1.0, np.max(np.abs(Bp.matrix))
    ):
        raise ValueError("Bp does not equal B @ A")
    n = B.dim
    d2 = sym_dim(n, 2)
    ker_B = kernel_basis(build_LPsi(B), rank_tol)
    ker_Bp = kernel_basis(build_LPsi(Bp), rank_tol)
    moved = tuple_transport(A, d2) @ ker_B
    angles = subspace_angles(moved, ker_Bp)
    max_angle = float(np.max(angles)) if angles.size else 0.0
    consistent = (ker_B.shape[1] == ker_Bp.shape[1]) and (max_angle <= tol)
    return ChangeBasisReport(n, max_angle, ker_B.shape[1], ker_Bp.shape[1],
                             consistent)


def nonlinear_Phi(A: np.ndarray, B: BasisMatrix) -> list:
    """Jets of the conjugated chart translations: (A P^{b_i} A^{-1})_i."""
    A = np.asarray(A, dtype=float)
    H = linear_jet(A)
    return [
        conjugate(translation_chart_jet(B.column(i)), H) for i in range(B.dim)
    ]


def nonlinear_Psi(G_tuple, k: int, membership_tol: float = 1e-8) -> list:
    """Antisymmetrized cubic parts of pairwise compositions, with the 1/4
    normalization that turns half-quadratic parts into their bracket.

    Preconditions: every jet has identity linear part and satisfies the
    dilation relation Fbar o G = G^k o Fbar at jet level (Fbar the 1/k
    scaling jet); violations raise ValueError.
    """
    G_tuple = list(G_tuple)
    n = G_tuple[0].dim
    fbar = scaling_jet(n, 1.0 / k)
    for idx, G in enumerate(G_tuple):
        if np.max(np.abs(G.L - np.eye(n))) > membership_tol:
            raise ValueError(f"jet {idx} does not have identity linear part")
        lhs = compose(fbar, G)
        rhs = compose(jet_power(G, k), fbar)
        dev = max(
            np.max(np.abs(lhs.L - rhs.L)),
            np.max(np.abs(lhs.quadratic.coeffs - rhs.quadratic.coeffs)),
            np.max(np.abs(lhs.cubic.coeffs - rhs.cubic.coeffs)),
        )
        scale = max(1.0, G.quadratic.max_abs(), G.cubic.max_abs())
        if dev > membership_tol * scale:
            raise ValueError(
                f"jet {idx} violates the dilation relation (deviation {dev:.3e})"
            )
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            diff = (
                compose(G_tuple[i], G_tuple[j]).cubic
                - compose(G_tuple[j], G_tuple[i]).cubic
            )
            out.append(0.25 * diff)
    return out
