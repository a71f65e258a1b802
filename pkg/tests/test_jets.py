import numpy as np
import pytest

from conformal_rigidity import jets as jt
from conformal_rigidity import symtensor as st
from conformal_rigidity.pipeline import extract_jet3


def random_sym(rng, n, r, scale=1.0):
    return st.SymMultiMap.from_dense(
        scale * rng.standard_normal((n,) + (n,) * r), symmetrize=True
    )


def random_jet(rng, n, unit_linear=False, scale=1.0):
    if unit_linear:
        L = np.eye(n)
    else:
        L = rng.standard_normal((n, n)) + 2.0 * np.eye(n)
    return jt.Jet3(L, random_sym(rng, n, 2, scale), random_sym(rng, n, 3, scale))


def jet_scale(*jets):
    return max(
        max(np.max(np.abs(J.L)), J.quadratic.max_abs(), J.cubic.max_abs(), 1.0)
        for J in jets
    )


def test_compose_identity():
    rng = np.random.default_rng(0)
    F = random_jet(rng, 3)
    eye = jt.identity_jet(3)
    assert jt.jet_deviation(jt.compose(F, eye), F) < 1e-14
    assert jt.jet_deviation(jt.compose(eye, F), F) < 1e-14


def test_compose_linear_parts_multiply():
    rng = np.random.default_rng(1)
    F, G = random_jet(rng, 3), random_jet(rng, 3)
    assert np.allclose(jt.compose(F, G).L, F.L @ G.L, atol=1e-12)


def test_compose_quadratic_rule_unit_inner_linear():
    # for D1 G = I the quadratic part of F o G is D2 F + D1 F o D2 G
    rng = np.random.default_rng(2)
    F = random_jet(rng, 3)
    G = random_jet(rng, 3, unit_linear=True)
    got = jt.compose(F, G).quadratic.dense
    expected = F.Qd + np.einsum("om,mij->oij", F.L, G.Qd)
    assert np.max(np.abs(got - expected)) < 1e-12


def test_compose_against_fd_composition_oracle():
    # numerically differentiate the composed cubic polynomial maps
    rng = np.random.default_rng(3)
    n = 2
    F, G = random_jet(rng, n, scale=0.5), random_jet(rng, n, scale=0.5)
    composed = jt.compose(F, G)
    D1, D2, D3 = extract_jet3(lambda Z: F(G(Z)), n, base_step=1e-2)
    assert np.max(np.abs(D1 - composed.L)) < 1e-7
    assert np.max(np.abs(D2 - composed.Qd)) < 1e-6
    assert np.max(np.abs(D3 - composed.Cd)) < 1e-5


def test_compose_associative():
    rng = np.random.default_rng(4)
    for _ in range(10):
        F, G, H = (random_jet(rng, 3) for _ in range(3))
        A = jt.compose(jt.compose(F, G), H)
        B = jt.compose(F, jt.compose(G, H))
        assert jt.jet_deviation(A, B) / jet_scale(A, B) < 1e-12


def test_compose_dimension_mismatch():
    rng = np.random.default_rng(5)
    with pytest.raises(ValueError):
        jt.compose(random_jet(rng, 2), random_jet(rng, 3))


def test_identity_and_scaling_jets():
    assert jt.jet_deviation(jt.scaling_jet(3, 1.0), jt.identity_jet(3)) == 0.0
    got = jt.compose(jt.scaling_jet(3, 0.5), jt.scaling_jet(3, 4.0))
    assert jt.jet_deviation(got, jt.scaling_jet(3, 2.0)) < 1e-15
    with pytest.raises(ValueError):
        jt.scaling_jet(3, 0.0)


def test_invert():
    rng = np.random.default_rng(6)
    assert jt.jet_deviation(jt.invert(jt.identity_jet(3)), jt.identity_jet(3)) == 0.0
    assert jt.jet_deviation(
        jt.invert(jt.scaling_jet(3, 0.25)), jt.scaling_jet(3, 4.0)
    ) < 1e-14
    for _ in range(10):
        F = random_jet(rng, 3)
        Finv = jt.invert(F)
        dev = jt.jet_deviation(jt.compose(Finv, F), jt.identity_jet(3))
        assert dev / jet_scale(F, Finv) < 1e-12
    with pytest.raises(ValueError):
        jt.Jet3(np.zeros((3, 3)))


def test_conjugate():
    rng = np.random.default_rng(7)
    F = random_jet(rng, 3)
    assert jt.jet_deviation(jt.conjugate(F, jt.identity_jet(3)), F) < 1e-13
    got = jt.conjugate(jt.scaling_jet(3, 0.3), jt.scaling_jet(3, 5.0))
    assert jt.jet_deviation(got, jt.scaling_jet(3, 0.3)) < 1e-14


def test_conjugate_translation_jet_by_linear_map():
    # quadratic part of A o P^{b_i} o A^{-1} is 2 A Q_v (A^{-1}., A^{-1}.)
    from conformal_rigidity.mobius import translation_chart_jet

    rng = np.random.default_rng(8)
    n = 3
    v = rng.standard_normal(n)
    A = rng.standard_normal((n, n)) + 2.0 * np.eye(n)
    got = jt.conjugate(translation_chart_jet(v), jt.linear_jet(A)).quadratic.dense
    Ainv = np.linalg.inv(A)
    expected = 2.0 * np.einsum(
        "om,mab,ai,bj->oij", A, st.make_Q(v).dense, Ainv, Ainv
    )
    assert np.max(np.abs(got - expected)) < 1e-11


def test_theta():
    rng = np.random.default_rng(9)
    assert jt.theta(jt.identity_jet(3)).max_abs() == 0.0
    G = random_jet(rng, 3, unit_linear=True)
    assert np.allclose(jt.theta(G).coeffs, 0.5 * G.quadratic.coeffs)
    with pytest.raises(ValueError):
        jt.theta(jt.scaling_jet(3, 0.5))


class TestQuadFlow:
    def test_time_zero_is_identity(self):
        rng = np.random.default_rng(10)
        Q = random_sym(rng, 3, 2)
        assert jt.jet_deviation(jt.quad_flow_jet(Q, 0.0), jt.identity_jet(3)) == 0.0

    def test_quadratic_part(self):
        rng = np.random.default_rng(11)
        Q = random_sym(rng, 3, 2)
        t = 0.37
        assert np.allclose(
            jt.quad_flow_jet(Q, t).quadratic.coeffs, 2.0 * t * Q.coeffs
        )

    def test_flow_law(self):
        rng = np.random.default_rng(12)
        Q = random_sym(rng, 3, 2)
        got = jt.compose(jt.quad_flow_jet(Q, 0.4), jt.quad_flow_jet(Q, -0.15))
        assert jt.jet_deviation(got, jt.quad_flow_jet(Q, 0.25)) < 1e-10

    def test_theta_inverts_flow_exactly(self):
        rng = np.random.default_rng(13)
        Q = random_sym(rng, 3, 2)
        assert np.array_equal(jt.theta(jt.quad_flow_jet(Q, 1.0)).coeffs, Q.coeffs)

    def test_dilation_equivariance(self):
        # Fbar o G_Q^t = G_Q^{kt} o Fbar = (G_Q^t)^k o Fbar at jet level
        rng = np.random.default_rng(14)
        Q = random_sym(rng, 3, 2)
        for k in (2, 3):
            fbar = jt.scaling_jet(3, 1.0 / k)
            G = jt.quad_flow_jet(Q, 0.6)
            lhs = jt.compose(fbar, G)
            rhs = jt.compose(jt.quad_flow_jet(Q, k * 0.6), fbar)
            assert jt.jet_deviation(lhs, rhs) < 1e-10
            powered = jt.compose(jt.jet_power(G, k), fbar)
            assert jt.jet_deviation(lhs, powered) < 1e-10

    def test_against_rk4_integration(self):
        # finite-differenced quadratic part of the RK4 time-t map matches 2tQ
        rng = np.random.default_rng(15)
        n = 3
        Q = random_sym(rng, n, 2, scale=0.3)
        t_final, steps = 0.4, 400

        def flow_map(Z):
            X = np.array(Z, dtype=float)
            h = t_final / steps

            def field(Y):
                return np.einsum("oij,...i,...j->...o", Q.dense, Y, Y)

            for _ in range(steps):
                k1 = field(X)
                k2 = field(X + 0.5 * h * k1)
                k3 = field(X + 0.5 * h * k2)
                k4 = field(X + h * k3)
                X = X + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            return X

        D1, D2, _ = extract_jet3(flow_map, n, base_step=1e-3)
        assert np.max(np.abs(D1 - np.eye(n))) < 1e-6
        assert np.max(np.abs(D2 - 2.0 * t_final * Q.dense)) < 1e-6


class TestLinearize:
    def test_pure_scaling_needs_no_normalization(self):
        H = jt.linearize(jt.scaling_jet(3, 0.5))
        assert jt.jet_deviation(H, jt.identity_jet(3)) == 0.0

    def test_quadratic_coefficient(self):
        # alpha = 1/k: quadratic of H is k^2/(k-1) times the quadratic of F
        rng = np.random.default_rng(16)
        for k in (2, 3, 5):
            F = jt.Jet3((1.0 / k) * np.eye(3), random_sym(rng, 3, 2))
            H = jt.linearize(F)
            assert np.allclose(
                H.quadratic.coeffs,
                k**2 / (k - 1) * F.quadratic.coeffs,
                rtol=1e-12,
            )

    def test_postcondition_annihilates_higher_parts(self):
        rng = np.random.default_rng(17)
        for _ in range(10):
            F = jt.Jet3(0.5 * np.eye(3), random_sym(rng, 3, 2),
                        random_sym(rng, 3, 3))
            H = jt.linearize(F)
            assert np.max(np.abs(H.L - np.eye(3))) == 0.0
            conj = jt.conjugate(F, H)
            assert jt.jet_deviation(conj, jt.scaling_jet(3, 0.5)) < 1e-10

    def test_rejects_bad_linear_parts(self):
        rng = np.random.default_rng(18)
        with pytest.raises(ValueError):
            jt.linearize(jt.Jet3(np.diag([0.5, 0.6, 0.5])))
        with pytest.raises(ValueError):
            jt.linearize(jt.Jet3(2.0 * np.eye(3), random_sym(rng, 3, 2)))


class TestJetDistance:
    def test_zero_iff_equal(self):
        rng = np.random.default_rng(19)
        F = random_jet(rng, 3)
        assert jt.jet_distance(F, F) == 0.0
        G = random_jet(rng, 3)
        assert jt.jet_distance(F, G) > 0.0

    def test_scaling_distance(self):
        assert jt.jet_distance(
            jt.scaling_jet(3, 0.8), jt.scaling_jet(3, 0.3)
        ) == pytest.approx(0.5)

    def test_translation_jet_distance_dominates_quadratic_norm(self):
        from conformal_rigidity.mobius import translation_chart_jet

        rng = np.random.default_rng(20)
        v = rng.standard_normal(3)
        J = translation_chart_jet(v)
        d = jt.jet_distance(J, jt.identity_jet(3), r=2)
        lo, _ = st.op_norm(2.0 * st.make_Q(v), n_samples=500, rng=3)
        assert d >= lo
        # the quadratic term alone contributes at least 2|v| (sampled on v/|v|)
        assert d >= 2.0 * np.linalg.norm(v) * (1 - 1e-9)

    def test_symmetry_and_triangle(self):
        rng = np.random.default_rng(21)
        F, G, H = (random_jet(rng, 3) for _ in range(3))
        assert jt.jet_distance(F, G) == pytest.approx(jt.jet_distance(G, F))
        assert jt.jet_distance(F, H) <= (
            jt.jet_distance(F, G) + jt.jet_distance(G, H) + 1e-9
        )


def test_bracket_composition_identity():
    # bracket of quadratic parts = antisymmetrized cubic of compositions
    rng = np.random.default_rng(22)
    for n in (2, 3, 4):
        for _ in range(10):
            G1 = random_jet(rng, n, unit_linear=True)
            G2 = random_jet(rng, n, unit_linear=True)
            lhs = st.bracket(G1.quadratic, G2.quadratic)
            rhs = jt.compose(G1, G2).cubic - jt.compose(G2, G1).cubic
            scale = max(lhs.max_abs(), 1.0)
            assert np.max(np.abs(lhs.coeffs - rhs.coeffs)) / scale < 1e-12


def test_quarter_normalization_of_antisymmetrized_cubics():
    # with theta carrying 1/2, the 1/4 prefactor turns composed time-1 flows
    # into exactly the bracket of their generators
    rng = np.random.default_rng(23)
    n = 3
    Q1, Q2 = random_sym(rng, n, 2), random_sym(rng, n, 2)
    G1, G2 = jt.quad_flow_jet(Q1, 1.0), jt.quad_flow_jet(Q2, 1.0)
    got = 0.25 * (jt.compose(G1, G2).cubic - jt.compose(G2, G1).cubic)
    want = st.bracket(Q1, Q2)
    assert np.max(np.abs(got.coeffs - want.coeffs)) < 1e-12


def test_jet_power():
    rng = np.random.default_rng(24)
    G = random_jet(rng, 2, unit_linear=True, scale=0.3)
    assert jt.jet_deviation(jt.jet_power(G, 0), jt.identity_jet(2)) == 0.0
    assert jt.jet_deviation(
        jt.jet_power(G, 3), jt.compose(G, jt.compose(G, G))
    ) < 1e-13
