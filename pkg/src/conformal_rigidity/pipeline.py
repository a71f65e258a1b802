"""End-to-end rigidity experiments on synthesized perturbed actions.

A perturbed action is built as h o rho o h^{-1} for a known standard action
rho and a parametric diffeomorphism h (a global conformal similarity composed
with compactly supported chart bumps).  Conjugation keeps the group relations
exact, gives a known global fixed point h(infinity) and a known conjugacy
class, so every recovery step is scored against ground truth that the
recovery path itself never touches.

The recovery path: locate the attracting fixed point of the dilation
generator by iteration, extract order-3 jets of the chart-conjugated
generator maps by finite differences, normalize the dilation jet, read the
translation directions off the quadratic parts by least squares, and glue a
global conjugacy by pushing points into the chart region with powers of the
first translation generator.

The synthesized family keeps the derivative of h at infinity conformal (the
bump profiles are radial in the squared distance, so their differentials
vanish at the bump centers, and the center bump sits at the chart origin).
Recovery by least-squares inversion of v -> Q_v presumes exactly this:
a non-conformal derivative at the fixed point would push the recovered
basis out of the ground-truth conjugacy class.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .jets import Jet3, conjugate, invert, linearize, theta
from .mobius import (
    ActionSpec,
    AffineSphereMap,
    ChartBumpMap,
    PointBatch,
    SphereMapChain,
    SpherePoint,
    StandardAction,
    chart_at,
    phi_bar,
    sphere_distance,
    verify_relations,
)
from .symtensor import BasisMatrix, make_Q

__all__ = [
    "MAX_EPS",
    "PerturbationSizeError",
    "RecoveryError",
    "PerturbationParams",
    "PerturbedAction",
    "make_perturbation",
    "FixedPointResult",
    "find_fixed_point",
    "extract_jet3",
    "jets_at_fixed_point",
    "RecoveredLocalModel",
    "recover_basis",
    "ConjugacyReport",
    "build_conjugacy",
    "ConjugacyVerdict",
    "classify_pair",
    "conformal_commutation_residual",
    "TrialResult",
    "run_closed_loop_trial",
    "trial_basis",
]

#: Largest admissible perturbation size; beyond it the attracting fixed
#: point (and with it the whole recovery path) is no longer guaranteed.
MAX_EPS = 0.1


class PerturbationSizeError(ValueError):
    """Perturbation parameters outside the admissible budget."""


class RecoveryError(RuntimeError):
    """A pipeline stage left its guaranteed regime (bad input or failure)."""


@dataclass(frozen=True)
class PerturbationParams:
    """Size and shape of a synthesized perturbation.

    ``eps`` is the overall C^2-size budget.  The fixed point of the result
    moves by about ``0.04 * eps`` in chart coordinates; extra bumps deform
    the action away from the fixed point without touching the chart origin.
    """

    eps: float
    n_extra_bumps: int = 1
    conformal_part: bool = True
    center_bump: bool = True

    def __post_init__(self):
        if self.eps < 0:
            raise PerturbationSizeError("eps must be nonnegative")
        if self.eps > MAX_EPS:
            raise PerturbationSizeError(
                f"eps={self.eps} exceeds the admissible budget {MAX_EPS}"
            )
        if self.n_extra_bumps < 0:
            raise PerturbationSizeError("n_extra_bumps must be >= 0")


class PerturbedAction:
    """A conjugated standard action with per-generator evaluation oracles.

    ``apply`` evaluates single generator steps through the conjugation
    pieces.  ``apply_word`` collapses a word first: because the generator
    maps are conjugates of commuting affine maps, any word acts by the
    conjugate of a single affine map, and tests confirm the collapsed and
    tokenwise evaluations agree to rounding.  The synthesis inputs (basis,
    conjugator) are retained for scoring only; recovery code consumes just
    the evaluation interface.
    """

    def __init__(self, spec: ActionSpec, conjugator: SphereMapChain,
                 params: PerturbationParams):
        self.spec = spec
        self.conjugator = conjugator
        self.params = params
        self._standard = StandardAction(spec)

    @property
    def n(self) -> int:
        return self.spec.n

    @property
    def k(self) -> int:
        return self.spec.k

    def generator_names(self) -> list:
        return self.spec.generator_names()

    def truth_basis(self) -> BasisMatrix:
        """Ground truth for scoring; not part of the recovery interface."""
        return self.spec.basis

    def fixed_point_truth(self) -> SpherePoint:
        return self.conjugator.apply(SpherePoint.infinity(self.n))

    def _conjugated(self, affine: AffineSphereMap, p):
        q = self.conjugator.apply_inverse(p)
        q = affine.apply(q)
        return self.conjugator.apply(q)

    def apply(self, gen: str, p, exponent: int = 1):
        return self._conjugated(self._standard._affine_for(gen, exponent), p)

    def apply_word(self, word, p):
        return self._conjugated(self._standard.word_affine(word), p)

    def apply_generator_power(self, gen: str, exponents, p):
        """Translation generator power with a per-row exponent vector."""
        q = self.conjugator.apply_inverse(p)
        q = self._standard.apply_generator_power(gen, exponents, q)
        return self.conjugator.apply(q)


def _random_unit(rng, n: int) -> np.ndarray:
    v = rng.standard_normal(n)
    return v / np.linalg.norm(v)


def make_perturbation(spec: ActionSpec, params: PerturbationParams,
                      seed: int = 0) -> PerturbedAction:
    """Synthesize a perturbed action h o rho o h^{-1} with known ground truth.

    h composes (i) a global conformal similarity x -> c T x + w and (ii) a
    chart bump displacement supported in the unit chart ball.  The center
    bump moves infinity, so the perturbed action has its global fixed point
    away from infinity; its radial-in-|y|^2 profile keeps Dh conformal
    there.  eps = 0 returns exactly the standard action.
    """
    rng = np.random.default_rng([int(seed), 0xC0F])
    eps = params.eps
    n = spec.n
    pieces = []
    if eps > 0:
        if params.conformal_part:
            c = float(np.exp(eps * rng.uniform(-0.5, 0.5)))
            skew = rng.standard_normal((n, n))
            skew = (skew - skew.T) / 2.0
            skew *= eps / max(np.linalg.norm(skew, 2), 1e-12)
            T = expm(skew)
            w_c = eps * 0.3 * rng.uniform(0.2, 1.0) * _random_unit(rng, n)
            pieces.append(AffineSphereMap(c * T, w_c))
        centers, radii, amps = [], [], []
        if params.center_bump:
            centers.append(np.zeros(n))
            radii.append(rng.uniform(0.6, 0.8))
            amps.append(0.04 * eps * _random_unit(rng, n))
        for _ in range(params.n_extra_bumps):
            r = rng.uniform(0.2, 0.28)
            # support must exclude the chart origin and stay in the chart ball
            c_norm = rng.uniform(r + 0.06, 0.9 - r)
            centers.append(c_norm * _random_unit(rng, n))
            radii.append(r)
            lip_frac = eps * rng.uniform(0.25, 0.45)
            amps.append(lip_frac * r / (8.0 / np.e) * _random_unit(rng, n))
        if centers:
            pieces.append(ChartBumpMap(centers, radii, amps))
    return PerturbedAction(spec, SphereMapChain(pieces), params)


@dataclass
class FixedPointResult:
    point: SpherePoint
    iterations: int
    final_step: float
    contraction_estimate: float
    b_fix_deviation: float

    def to_dict(self) -> dict:
        return {
            "iterations": self.iterations,
            "final_step": self.final_step,
            "contraction_estimate": self.contraction_estimate,
            "b_fix_deviation": self.b_fix_deviation,
        }


def find_fixed_point(action, tol: float = 1e-13,
                     max_iter: int = 500) -> FixedPointResult:
    """Iterate the dilation generator from infinity to its attracting fixed
    point, then confirm every translation generator fixes it too.

    The contraction rate is about 1/k.  Failure to converge, or a
    translation generator moving the limit by more than 10 * tol, raises
    :class:`RecoveryError` (the action is outside the admissible class).
    """
    p = SpherePoint.infinity(action.n)
    steps = []
    for it in range(max_iter):
        q = action.apply("a", p)
        step = sphere_distance(p, q)
        steps.append(step)
        p = q
        if step < tol:
            break
    else:
        raise RecoveryError(
            f"dilation iteration did not reach {tol} in {max_iter} steps"
        )
    ratios = [
        steps[i + 1] / steps[i]
        for i in range(1, len(steps) - 1)
        if steps[i] > 100.0 * tol
    ]
    contraction = float(np.median(ratios)) if ratios else 1.0 / action.k
    b_dev = 0.0
    for i in range(action.n):
        moved = action.apply(f"b{i + 1}", p)
        b_dev = max(b_dev, sphere_distance(p, moved))
    if b_dev > 10.0 * tol:
        raise RecoveryError(
            f"translation generators move the dilation fixed point by {b_dev:.3e}"
        )
    return FixedPointResult(p, len(steps), steps[-1], contraction, b_dev)


def extract_jet3(fn, n: int, base_step: float = 1e-3):
    """Derivatives of order 1..3 at 0 of a batch map fn: (N, n) -> (N, n).

    Central-difference stencils at steps h and h/2 combined by one Richardson
    step, so the truncation error is O(h^4).  Returns dense arrays
    (D1, D2, D3); D2 and D3 are symmetric by construction.
    """
    h = float(base_step)
    eye = np.eye(n, dtype=int)
    offsets: dict = {}

    def add(ivec) -> None:
        key = tuple(int(x) for x in ivec)
        if key not in offsets:
            offsets[key] = len(offsets)

    add(np.zeros(n, dtype=int))
    for scale in (2, 1):
        for i in range(n):
            add(scale * eye[i])
            add(-scale * eye[i])
        for i in range(n):
            for j in range(i, n):
                for s1 in (1, -1):
                    for s2 in (1, -1):
                        add(scale * (s1 * eye[i] + s2 * eye[j]))
        for i in range(n):
            for j in range(i, n):
                for k3 in range(j, n):
                    for s1 in (1, -1):
                        for s2 in (1, -1):
                            for s3 in (1, -1):
                                add(scale * (s1 * eye[i] + s2 * eye[j] + s3 * eye[k3]))
    ivecs = np.array(list(offsets.keys()), dtype=float)
    values = np.asarray(fn(ivecs * (h / 2.0)), dtype=float)

    def g(ivec) -> np.ndarray:
        return values[offsets[tuple(int(x) for x in ivec)]]

    levels = []
    for scale in (2, 1):
        hh = h * scale / 2.0
        D1 = np.empty((n, n))
        D2 = np.zeros((n, n, n))
        D3 = np.zeros((n, n, n, n))
        for i in range(n):
            D1[:, i] = (g(scale * eye[i]) - g(-scale * eye[i])) / (2.0 * hh)
        for i in range(n):
            for j in range(i, n):
                acc = np.zeros(n)
                for s1 in (1, -1):
                    for s2 in (1, -1):
                        acc += s1 * s2 * g(scale * (s1 * eye[i] + s2 * eye[j]))
                val = acc / (4.0 * hh * hh)
                D2[:, i, j] = val
                D2[:, j, i] = val
        for i in range(n):
            for j in range(i, n):
                for k3 in range(j, n):
                    acc = np.zeros(n)
                    for s1 in (1, -1):
                        for s2 in (1, -1):
                            for s3 in (1, -1):
                                acc += s1 * s2 * s3 * g(
                                    scale * (s1 * eye[i] + s2 * eye[j] + s3 * eye[k3])
                                )
                    val = acc / (8.0 * hh**3)
                    for perm in itertools.permutations((i, j, k3)):
                        D3[:, perm[0], perm[1], perm[2]] = val
        levels.append((D1, D2, D3))
    full, half = levels
    D1 = (4.0 * half[0] - full[0]) / 3.0
    D2 = (4.0 * half[1] - full[1]) / 3.0
    D3 = (4.0 * half[2] - full[2]) / 3.0
    return D1, D2, D3


def jets_at_fixed_point(action, p_hat: SpherePoint, fd_step: float = 1e-3,
                        linear_tol: float = 1e-6) -> dict:
    """Order-3 jets of the chart-conjugated generator maps at the fixed point.

    Asserts the linear-part rigidity that holds for every action in the
    admissible class: translation jets have identity linear part and the
    dilation jet has linear part I/k, both within ``linear_tol``.
    """
    chart = chart_at(p_hat)
    n, k = action.n, action.k
    out = {}
    for gen in action.generator_names():
        def fn(Z, gen=gen):
            return chart.forward(action.apply(gen, chart.inverse(Z)))

        D1, D2, D3 = extract_jet3(fn, n, fd_step)
        target = np.eye(n) / (k if gen == "a" else 1)
        dev = float(np.max(np.abs(D1 - target)))
        if dev > linear_tol:
            raise RecoveryError(
                f"linear part of {gen} deviates from its rigid value by {dev:.3e}"
            )
        out[gen] = Jet3(D1, D2, D3)
    return out


@dataclass
class RecoveredLocalModel:
    """Local normal form recovered from generator jets: the basis, the
    order-3 normalization jet H (identity linear part) and its inverse."""

    basis: BasisMatrix
    normalization: Jet3
    normalization_inv: Jet3
    theta_residual: float
    linear_deviation_a: float
    linear_deviation_b: float


def recover_basis(jets_by_gen: dict, k: int,
                  theta_residual_tol: float = 1e-4,
                  linear_tol: float = 1e-6) -> RecoveredLocalModel:
    """Recover the basis whose standard local model matches the jets.

    The dilation jet is normalized to its pure scaling by the order-2/3
    homological equations; the translation jets, conjugated by that
    normalization, have quadratic parts of the form 2 Q_w, and the w_i are
    read off by least squares in the linear family v -> Q_v.  A least-squares
    residual above ``theta_residual_tol`` (relative) means the input is not
    a small perturbation of a standard local action.
    """
    a_jet = jets_by_gen["a"]
    n = a_jet.dim
    dev_a = float(np.max(np.abs(a_jet.L - np.eye(n) / k)))
    H = linearize(a_jet, scalar_tol=linear_tol)
    q_matrix = np.column_stack(
        [make_Q(np.eye(n)[i]).to_vector() for i in range(n)]
    )
    columns = []
    worst_resid = 0.0
    dev_b = 0.0
    for i in range(n):
        b_jet = jets_by_gen[f"b{i + 1}"]
        dev_b = max(dev_b, float(np.max(np.abs(b_jet.L - np.eye(n)))))
        J = conjugate(b_jet, H)
        target = theta(J, tol=10.0 * linear_tol).to_vector()
        w, *_ = np.linalg.lstsq(q_matrix, target, rcond=None)
        resid = np.linalg.norm(q_matrix @ w - target)
        rel = resid / max(np.linalg.norm(target), 1e-12)
        worst_resid = max(worst_resid, float(rel))
        columns.append(w)
    if worst_resid > theta_residual_tol:
        raise RecoveryError(
            f"quadratic parts are not conformal forms "
            f"(least-squares residual {worst_resid:.3e})"
        )
    try:
        basis = BasisMatrix(np.column_stack(columns))
    except ValueError as exc:
        raise RecoveryError(f"recovered basis is singular: {exc}") from exc
    return RecoveredLocalModel(
        basis=basis,
        normalization=H,
        normalization_inv=invert(H),
        theta_residual=worst_resid,
        linear_deviation_a=dev_a,
        linear_deviation_b=dev_b,
    )


def _escape_power(X: np.ndarray, v: np.ndarray, R: float) -> np.ndarray:
    """Smallest m >= 0 per row with |x + m v|_inf >= R (v nonzero)."""
    N = X.shape[0]
    best = np.full(N, np.inf)
    for i in range(X.shape[1]):
        vi = v[i]
        if abs(vi) < 1e-14:
            continue
        target = (R - X[:, i]) / vi if vi > 0 else (-R - X[:, i]) / vi
        best = np.minimum(best, np.ceil(np.maximum(target, 0.0)))
    if not np.all(np.isfinite(best)):
        raise ValueError("translation vector is zero")
    m = best.astype(np.int64)
    m[np.max(np.abs(X), axis=1) >= R] = 0
    for _ in range(3):
        bad = np.max(np.abs(X + m[:, None] * v), axis=1) < R
        if not bad.any():
            break
        m[bad] += 1
    return m


@dataclass
class ConjugacyReport:
    escape_radius: float
    grid_points: int
    residual_per_generator: dict
    max_residual: float
    mx_independence: float
    residual_tol: float
    mx_tol: float
    ok: bool

    def to_dict(self) -> dict:
        return {
            "escape_radius": self.escape_radius,
            "grid_points": self.grid_points,
            "residual_per_generator": self.residual_per_generator,
            "max_residual": self.max_residual,
            "mx_independence": self.mx_independence,
            "residual_tol": self.residual_tol,
            "mx_tol": self.mx_tol,
            "ok": self.ok,
        }


class _ConjugacyMap:
    """The sampled conjugacy x -> rho^{b1^{-m_x}} (chart glue) rho_B^{b1^{m_x}} x."""

    def __init__(self, action, model: RecoveredLocalModel, p_hat: SpherePoint,
                 R: float, m_budget: int):
        self.action = action
        self.model = model
        self.y_hat = p_hat.chart()
        self.v1 = model.basis.column(0)
        self.R = R
        self.m_budget = m_budget

    def __call__(self, X: np.ndarray, shift: int = 0) -> PointBatch:
        m = _escape_power(X, self.v1, self.R) + shift
        if int(np.max(m)) > self.m_budget:
            raise RecoveryError(
                f"escape power {int(np.max(m))} exceeds budget {self.m_budget}"
            )
        x_far = X + m[:, None] * self.v1
        w = phi_bar(x_far)
        z = self.model.normalization_inv(w)
        near = PointBatch(z + self.y_hat, np.ones(len(X), dtype=bool))
        return self.action.apply_generator_power("b1", -m, near)


def _model_moves(X: np.ndarray, basis: BasisMatrix, k: int, gen: str,
                 e: int) -> np.ndarray:
    if gen == "a":
        return float(k) ** e * X
    idx = int(gen[1:]) - 1
    return X + e * basis.column(idx)


def _conjugacy_metrics(hmap: _ConjugacyMap, X: np.ndarray, tokens,
                       basis: BasisMatrix, k: int):
    h_x = hmap(X)
    mx_dev = float(np.max(sphere_distance(h_x, hmap(X, shift=1))))
    residuals = {}
    for gen, e in tokens:
        lhs = hmap.action.apply(gen, h_x, exponent=e)
        rhs = hmap(_model_moves(X, basis, k, gen, e))
        residuals[f"{gen}^{e}"] = float(np.max(sphere_distance(lhs, rhs)))
    return residuals, mx_dev


def build_conjugacy(action, model: RecoveredLocalModel, p_hat: SpherePoint,
                    grid_points: int = 21, grid_range: float = 3.0,
                    residual_tol: float = 1e-5, mx_tol: float = 1e-8,
                    m_budget: int = 10**7, max_doublings: int = 16,
                    raise_on_failure: bool = True) -> ConjugacyReport:
    """Sample the global conjugacy on a grid and report its defects.

    For each grid point the smallest power of the first translation
    generator pushing it past the escape radius is used; the gluing map is
    the recovered chart normalization.  The report carries the worst
    equivariance residual over all generators and inverses, plus the
    deviation between computing with the minimal power and the next one.

    The escape radius starts at the floor 4 * max_i |v_i| and doubles until
    probe defects drop below the tolerances (the order-3 normalization makes
    defects shrink like R^-2 after transport back from the escape region,
    and the probing stops at the rounding floor).
    """
    n, k = action.n, action.k
    basis = model.basis
    tokens = [("a", 1), ("a", -1)]
    for i in range(n):
        tokens += [(f"b{i + 1}", 1), (f"b{i + 1}", -1)]

    corners = np.array(list(itertools.product((-grid_range, grid_range), repeat=n)))
    probe = np.vstack([corners, np.zeros((1, n)), 0.37 * corners[: max(1, n)]])

    col_norms = np.linalg.norm(basis.matrix, axis=0)
    R_floor = max(4.0 * float(np.max(col_norms)), 1.0)
    best = None
    stalled = 0
    for j in range(max_doublings + 1):
        R = R_floor * 2.0**j
        hmap = _ConjugacyMap(action, model, p_hat, R, m_budget)
        residuals, mx_dev = _conjugacy_metrics(hmap, probe, tokens, basis, k)
        score = max(max(residuals.values()) / residual_tol, mx_dev / mx_tol)
        if best is None or score < best[0]:
            best = (score, R)
            stalled = 0
        else:
            stalled += 1
        if score <= 1.0 / 3.0:
            best = (score, R)
            break
        if stalled >= 2:
            break
    R = best[1]

    axes = [np.linspace(-grid_range, grid_range, grid_points)] * n
    X = np.array(list(itertools.product(*axes)))
    hmap = _ConjugacyMap(action, model, p_hat, R, m_budget)
    residuals, mx_dev = _conjugacy_metrics(hmap, X, tokens, basis, k)
    max_resid = max(residuals.values())
    ok = (max_resid <= residual_tol) and (mx_dev <= mx_tol)
    report = ConjugacyReport(
        escape_radius=R,
        grid_points=X.shape[0],
        residual_per_generator=residuals,
        max_residual=max_resid,
        mx_independence=mx_dev,
        residual_tol=residual_tol,
        mx_tol=mx_tol,
        ok=ok,
    )
    if raise_on_failure and not ok:
        raise RecoveryError(
            f"conjugacy residual {max_resid:.3e} / mx deviation {mx_dev:.3e} "
            f"exceed tolerances ({residual_tol:.1e}, {mx_tol:.1e})"
        )
    return report


@dataclass
class ConjugacyVerdict:
    """Outcome of the conformal-equivalence decision for two bases."""

    conjugate: bool
    c: float
    T: np.ndarray
    residual: float
    deviation: float

    def to_dict(self) -> dict:
        return {
            "conjugate": self.conjugate,
            "c": self.c,
            "T": self.T.tolist(),
            "residual": self.residual,
            "deviation": self.deviation,
        }


def classify_pair(B: BasisMatrix, Bp: BasisMatrix,
                  tol: float = 1e-6) -> ConjugacyVerdict:
    """Decide whether Bp = (c T) B for a scale c > 0 and orthogonal T.

    A = Bp B^{-1} is tested for conformality: c is the determinant root
    det(A^T A)^{1/(2n)} (exact when A = cT and symmetric in the two bases),
    and the decision value is |A^T A - c^2 I|_F / c^2 against ``tol``.  T is
    the orthogonal polar factor of A, so T^T T = I to rounding; the reported
    residual is |Bp - c T B|_F.
    """
    n = B.dim
    A = Bp.matrix @ np.linalg.inv(B.matrix)
    gram = A.T @ A
    sign, logdet = np.linalg.slogdet(gram)
    if sign <= 0:
        raise ValueError("degenerate basis pair")
    c = float(np.exp(logdet / (2 * n)))
    deviation = float(np.linalg.norm(gram - c * c * np.eye(n)) / (c * c))
    u, _, vh = np.linalg.svd(A)
    T = u @ vh
    residual = float(np.linalg.norm(Bp.matrix - c * T @ B.matrix))
    return ConjugacyVerdict(
        conjugate=bool(deviation <= tol),
        c=c,
        T=T,
        residual=residual,
        deviation=deviation,
    )


def conformal_commutation_residual(v, w, A) -> float:
    """Coefficient norm of A Q_v - Q_w(A., A.).

    Zero exactly when A intertwines the two conformal forms; by the
    classification this forces A to be a positive multiple of an orthogonal
    matrix (with w the corresponding image of v).
    """
    v = np.asarray(v, dtype=float)
    w = np.asarray(w, dtype=float)
    A = np.asarray(A, dtype=float)
    if not np.any(v) or not np.any(w):
        raise ValueError("v and w must be nonzero")
    if abs(np.linalg.det(A)) < 1e-12:
        raise ValueError("A must be invertible")
    Qv = make_Q(v).dense
    Qw = make_Q(w).dense
    left = np.einsum("om,mij->oij", A, Qv)
    right = np.einsum("oab,ai,bj->oij", Qw, A, A)
    return float(np.linalg.norm(left - right))


def trial_basis(n: int, rng) -> BasisMatrix:
    """Well-conditioned basis with order-one columns for closed-loop trials."""
    rng = np.random.default_rng(rng)
    for _ in range(1000):
        m = rng.uniform(-1.0, 1.0, size=(n, n))
        norms = np.linalg.norm(m, axis=0)
        if np.min(norms) < 1e-3:
            continue
        m = m / norms * rng.uniform(0.8, 1.25, size=n)
        if np.linalg.cond(m) <= 50.0:
            return BasisMatrix(m)
    raise RuntimeError("failed to draw a trial basis")


@dataclass
class TrialResult:
    n: int
    k: int
    seed: int
    eps: float
    fixed_point_error: float
    contraction_estimate: float
    linear_deviation_a: float
    linear_deviation_b: float
    theta_residual: float
    classify_conjugate: bool
    classify_deviation: float
    conjugacy: ConjugacyReport
    relation_deviation: float
    ok: bool = field(default=False)

    def to_dict(self) -> dict:
        out = {
            "n": self.n,
            "k": self.k,
            "seed": self.seed,
            "eps": self.eps,
            "fixed_point_error": self.fixed_point_error,
            "contraction_estimate": self.contraction_estimate,
            "linear_deviation_a": self.linear_deviation_a,
            "linear_deviation_b": self.linear_deviation_b,
            "theta_residual": self.theta_residual,
            "classify_conjugate": self.classify_conjugate,
            "classify_deviation": self.classify_deviation,
            "relation_deviation": self.relation_deviation,
            "ok": self.ok,
        }
        out["conjugacy"] = self.conjugacy.to_dict()
        return out


def run_closed_loop_trial(n: int, k: int, seed: int, eps: float = 0.05,
                          fd_step: float = 1e-3, grid_points: int = 21,
                          grid_range: float = 3.0,
                          fixed_point_tol: float = 1e-8,
                          classify_tol: float = 1e-5,
                          residual_tol: float = 1e-5,
                          mx_tol: float = 1e-8,
                          relation_samples: int = 20) -> TrialResult:
    """One full recovery experiment scored against synthesis ground truth."""
    rng = np.random.default_rng([seed, 0xB5])
    truth = trial_basis(n, rng)
    spec = ActionSpec(n, k, truth)
    action = make_perturbation(spec, PerturbationParams(eps), seed)

    relation_dev = verify_relations(
        action, rng=rng, n_samples=relation_samples
    ).max_deviation

    fp = find_fixed_point(action)
    fp_error = sphere_distance(fp.point, action.fixed_point_truth())

    jets = jets_at_fixed_point(action, fp.point, fd_step=fd_step)
    model = recover_basis(jets, k)
    verdict = classify_pair(truth, model.basis, tol=classify_tol)
    conj = build_conjugacy(
        action, model, fp.point,
        grid_points=grid_points, grid_range=grid_range,
        residual_tol=residual_tol, mx_tol=mx_tol,
        raise_on_failure=False,
    )
    ok = (
        fp_error <= fixed_point_tol
        and verdict.conjugate
        and conj.ok
        and relation_dev <= 1e-10
    )
    return TrialResult(
        n=n, k=k, seed=seed, eps=eps,
        fixed_point_error=float(fp_error),
        contraction_estimate=fp.contraction_estimate,
        linear_deviation_a=model.linear_deviation_a,
        linear_deviation_b=model.linear_deviation_b,
        theta_residual=model.theta_residual,
        classify_conjugate=verdict.conjugate,
        classify_deviation=verdict.deviation,
        conjugacy=conj,
        relation_deviation=float(relation_dev),
        ok=ok,
    )
