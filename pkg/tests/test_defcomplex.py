import numpy as np
import pytest

from conformal_rigidity import defcomplex as dc
from conformal_rigidity import jets as jt
from conformal_rigidity import mobius as mb
from conformal_rigidity import symtensor as st


def random_sym2(rng, n):
    return st.SymMultiMap.from_dense(
        rng.standard_normal((n, n, n)), symmetrize=True
    )


class TestFirstOperator:
    def test_zero_direction(self):
        B = st.BasisMatrix.identity(3)
        out = dc.apply_LPhi(B, np.zeros((3, 3)), np.zeros((3, 3)))
        assert all(q.max_abs() == 0.0 for q in out)

    def test_identity_direction_gives_minus_Q(self):
        # (A'=I, B'=0) evaluates to (-Q_{v_i})_i
        rng = np.random.default_rng(0)
        B = st.random_basis(3, rng)
        out = dc.apply_LPhi(B, np.eye(3), np.zeros((3, 3)))
        for i, q in enumerate(out):
            expected = -1.0 * st.make_Q(B.column(i))
            assert np.allclose(q.coeffs, expected.coeffs, atol=1e-13)

    def test_translation_direction_gives_Q_of_columns(self):
        rng = np.random.default_rng(1)
        B = st.random_basis(3, rng)
        Bp = rng.standard_normal((3, 3))
        out = dc.apply_LPhi(B, np.zeros((3, 3)), Bp)
        for i, q in enumerate(out):
            expected = st.make_Q(Bp[:, i])
            assert np.allclose(q.coeffs, expected.coeffs, atol=1e-13)

    def test_matrix_matches_direct_application(self):
        rng = np.random.default_rng(2)
        B = st.random_basis(2, rng)
        phi = dc.build_LPhi(B)
        A = rng.standard_normal((2, 2))
        Bp = rng.standard_normal((2, 2))
        direct = st.flatten_maps(dc.apply_LPhi(B, A, Bp))
        via_matrix = phi @ np.concatenate([A.reshape(-1), Bp.reshape(-1)])
        assert np.allclose(direct, via_matrix, atol=1e-12)


class TestSecondOperator:
    def test_zero_input(self):
        B = st.BasisMatrix.identity(3)
        psi = dc.build_LPsi(B)
        assert np.allclose(psi @ np.zeros(psi.shape[1]), 0.0)

    def test_vanishes_on_the_conformal_tuple(self):
        # q_i = Q_{v_i} is in the kernel
        rng = np.random.default_rng(3)
        for n in (2, 3):
            B = st.random_basis(n, rng)
            psi = dc.build_LPsi(B)
            q = st.flatten_maps([st.make_Q(B.column(i)) for i in range(n)])
            assert np.max(np.abs(psi @ q)) < 1e-12 * max(1, np.max(np.abs(psi)))

    def test_single_block_antisymmetry_example(self):
        # n=2, B=I, q1 = Q_{e2}, q2 = 0: the only block is [Q_{e2}, Q_{e2}]
        B = st.BasisMatrix.identity(2)
        psi = dc.build_LPsi(B)
        q = st.flatten_maps([st.make_Q(np.eye(2)[1]), st.SymMultiMap.zeros(2, 2)])
        assert np.max(np.abs(psi @ q)) < 1e-14


def test_complex_property_random_bases():
    rng = np.random.default_rng(4)
    for n in (2, 3):
        for _ in range(20):
            ops = dc.build_operators(st.random_basis(n, rng))
            assert ops.composite_residual() <= 1e-10


class TestExactness:
    def test_identity_basis_n2(self):
        rep = dc.exactness_report(st.BasisMatrix.identity(2))
        assert rep.exact
        assert rep.rank_phi == rep.nullity_psi

    def test_random_bases(self):
        rng = np.random.default_rng(5)
        for n in (2, 3, 4):
            rep = dc.exactness_report(st.random_basis(n, rng))
            assert rep.exact

    def test_kernel_dimension_constant_over_bases(self):
        rng = np.random.default_rng(6)
        for n in (2, 3):
            dims = {
                dc.exactness_report(st.random_basis(n, rng)).dim_ker_phi
                for _ in range(5)
            }
            assert len(dims) == 1

    def test_negative_control(self):
        # a random matrix in place of the second operator breaks exactness
        rng = np.random.default_rng(7)
        B = st.random_basis(2, rng)
        ops = dc.build_operators(B)
        fake = dc.DeformationOperators(
            2, B, ops.phi_matrix, rng.standard_normal(ops.psi_matrix.shape)
        )
        rep = dc.exactness_report(B, operators=fake)
        assert not rep.exact


class TestSlice:
    def test_constraint_counts_and_rank(self):
        for n in (2, 3, 4, 5):
            W = dc.build_W(n)
            assert W.n_constraints == n * n + n * (n - 1) // 2 + (n - 1)
            assert np.linalg.matrix_rank(W.constraint_matrix) == W.n_constraints

    def test_project_zero(self):
        A, Bp = dc.project_to_W([st.SymMultiMap.zeros(3, 2) for _ in range(3)])
        assert not np.any(A) and not np.any(Bp)

    def test_remainder_lies_in_slice(self):
        rng = np.random.default_rng(8)
        eye = st.BasisMatrix.identity(3)
        W = dc.build_W(3)
        for _ in range(20):
            q = [random_sym2(rng, 3) for _ in range(3)]
            A, Bp = dc.project_to_W(q)
            img = dc.apply_LPhi(eye, A, Bp)
            rem = [qi - gi for qi, gi in zip(q, img)]
            assert np.max(np.abs(W.residuals(rem))) < 1e-10

    def test_image_elements_project_to_slice(self):
        rng = np.random.default_rng(9)
        eye = st.BasisMatrix.identity(3)
        W = dc.build_W(3)
        q = dc.apply_LPhi(eye, rng.standard_normal((3, 3)),
                          rng.standard_normal((3, 3)))
        A, Bp = dc.project_to_W(q)
        rem = [qi - gi for qi, gi in zip(q, dc.apply_LPhi(eye, A, Bp))]
        assert np.max(np.abs(W.residuals(rem))) < 1e-10


class TestTransversality:
    def test_identity_basis(self):
        for n in (2, 4):
            rep = dc.verify_transversality(st.BasisMatrix.identity(n))
            assert not rep.kernel_meets_W
            assert rep.sum_spans
            assert rep.min_intersection_sv >= 1e-6

    def test_random_basis_reduces_to_identity(self):
        rng = np.random.default_rng(10)
        rep = dc.verify_transversality(st.random_basis(3, rng))
        assert not rep.kernel_meets_W and rep.sum_spans

    def test_degenerate_control_full_space(self):
        # with the slice enlarged to everything, the kernel trivially meets it
        n = 2
        full = dc.SubspaceW(n, np.zeros((0, n * st.sym_dim(n, 2))))
        rep = dc.verify_transversality(st.BasisMatrix.identity(n), W=full)
        assert rep.kernel_meets_W

    def test_kernel_meets_slice_only_at_zero_identitywise(self):
        # project an orthonormal kernel basis onto the slice along the image;
        # the remainders must vanish, and with them every evaluation identity
        # q_j(e_i, e_j) = 0, q_i(e_j, e_j) = 0, q_i(e_j, e_k) = 0, the paired
        # diagonal sums, and the cyclic equalities on distinct triples
        for n in (2, 3, 4):
            eye = st.BasisMatrix.identity(n)
            ker = dc.kernel_basis(dc.build_LPsi(eye))
            assert ker.shape[1] > 0
            worst = 0.0
            for col in range(ker.shape[1]):
                q = st.unflatten_maps(ker[:, col], n, 2, n)
                A, Bp = dc.project_to_W(q)
                img = dc.apply_LPhi(eye, A, Bp)
                rem = [qi - gi for qi, gi in zip(q, img)]
                dense = [r.dense for r in rem]
                for i in range(n):
                    for j in range(n):
                        worst = max(worst, abs(np.max(dense[j][:, i, j])))
                        worst = max(worst, np.max(np.abs(dense[i][:, j, j])))
                        worst = max(worst, abs(
                            dense[i][i, j, j] + dense[j][j, i, i]
                        ))
                        for k3 in range(n):
                            if len({i, j, k3}) == 3:
                                worst = max(worst, np.max(np.abs(
                                    dense[i][:, j, k3] - dense[j][:, k3, i]
                                )))
                                worst = max(worst, np.max(np.abs(
                                    dense[i][:, j, k3]
                                )))
            assert worst <= 1e-10, (n, worst)


class TestChangeBasis:
    def test_identity_change(self):
        rng = np.random.default_rng(11)
        B = st.random_basis(2, rng)
        rep = dc.change_basis_kernel(B, B, np.eye(2))
        assert rep.consistent and rep.max_principal_angle < 1e-12

    def test_scalar_change(self):
        B = st.BasisMatrix.identity(2)
        Bp = st.BasisMatrix(2.0 * np.eye(2))
        rep = dc.change_basis_kernel(B, Bp, 2.0 * np.eye(2))
        assert rep.consistent and rep.max_principal_angle < 1e-10

    def test_random_change(self):
        rng = np.random.default_rng(12)
        B = st.random_basis(3, rng)
        A = rng.standard_normal((3, 3)) + 2.0 * np.eye(3)
        rep = dc.change_basis_kernel(B, st.BasisMatrix(B.matrix @ A), A)
        assert rep.consistent and rep.max_principal_angle < 1e-8

    def test_mismatched_product_rejected(self):
        B = st.BasisMatrix.identity(2)
        with pytest.raises(ValueError):
            dc.change_basis_kernel(B, st.BasisMatrix(3.0 * np.eye(2)),
                                   2.0 * np.eye(2))


class TestNonlinearMaps:
    def test_identity_gives_local_jets(self):
        rng = np.random.default_rng(13)
        B = st.random_basis(2, rng)
        spec = mb.ActionSpec(2, 2, B)
        jets = dc.nonlinear_Phi(np.eye(2), B)
        for i, J in enumerate(jets):
            expected = mb.local_jet(spec, f"b{i + 1}")
            assert jt.jet_deviation(J, expected) < 1e-12

    def test_composite_vanishes(self):
        rng = np.random.default_rng(14)
        for n, k in [(2, 2), (3, 3)]:
            B = st.random_basis(n, rng)
            A = rng.standard_normal((n, n)) + 2.0 * np.eye(n)
            out = dc.nonlinear_Psi(dc.nonlinear_Phi(A, B), k)
            assert max(o.max_abs() for o in out) < 1e-9

    def test_vanishes_on_commuting_flows_with_common_generator(self):
        rng = np.random.default_rng(15)
        Q = random_sym2(rng, 2)
        G1 = jt.quad_flow_jet(Q, 0.4)
        G2 = jt.quad_flow_jet(Q, -0.9)
        out = dc.nonlinear_Psi([G1, G2], k=2)
        assert max(o.max_abs() for o in out) < 1e-12

    def test_membership_violations_rejected(self):
        rng = np.random.default_rng(16)
        bad_linear = jt.Jet3(2.0 * np.eye(2))
        with pytest.raises(ValueError):
            dc.nonlinear_Psi([bad_linear, jt.identity_jet(2)], k=2)
        # identity linear part but no dilation relation
        bad_relation = jt.Jet3(np.eye(2), random_sym2(rng, 2))
        with pytest.raises(ValueError):
            dc.nonlinear_Psi([bad_relation, jt.identity_jet(2)], k=2)

    def test_finite_difference_consistency_first_operator(self):
        # directional derivatives of the nonlinear map at (I, B) match the
        # assembled matrix columns
        rng = np.random.default_rng(17)
        B = st.random_basis(2, rng)
        phi = dc.build_LPhi(B)
        eps = 1e-6
        A_dir = rng.standard_normal((2, 2))
        B_dir = rng.standard_normal((2, 2))

        def theta_phi(A, basis_matrix):
            jets = dc.nonlinear_Phi(A, st.BasisMatrix(basis_matrix))
            return st.flatten_maps([jt.theta(J, tol=1.0) for J in jets])

        plus = theta_phi(np.eye(2) + eps * A_dir, B.matrix + eps * B_dir)
        minus = theta_phi(np.eye(2) - eps * A_dir, B.matrix - eps * B_dir)
        fd = (plus - minus) / (2 * eps)
        direction = np.concatenate([A_dir.reshape(-1), B_dir.reshape(-1)])
        assert np.max(np.abs(fd - phi @ direction)) < 1e-6

    def test_finite_difference_consistency_second_operator(self):
        # directional derivative of the flow-composed map at (Q_{v_i}) matches
        # the assembled matrix
        rng = np.random.default_rng(18)
        B = st.random_basis(2, rng)
        psi = dc.build_LPsi(B)
        base = [st.make_Q(B.column(i)) for i in range(2)]
        direction = [random_sym2(rng, 2) for _ in range(2)]
        eps = 1e-6

        def psi_of(qs):
            jets = [jt.quad_flow_jet(q, 1.0) for q in qs]
            return st.flatten_maps(dc.nonlinear_Psi(jets, k=2))

        plus = psi_of([q + eps * d for q, d in zip(base, direction)])
        minus = psi_of([q - eps * d for q, d in zip(base, direction)])
        fd = (plus - minus) / (2 * eps)
        assert np.max(np.abs(fd - psi @ st.flatten_maps(direction))) < 1e-6
