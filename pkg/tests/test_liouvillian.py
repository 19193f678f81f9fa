import itertools
import json

import numpy as np
import pytest
from hypothesis import given
from scipy.linalg import null_space

from qmpemba import liouvillian as L
from qmpemba.errors import (
    EigenmodeSingularityError,
    NearDefectiveMatrixError,
    NoPhysicalRootError,
    NoUniqueSteadyStateError,
    UnequalRatesUnsupportedError,
)
from qmpemba.qstate import SystemParams, thermal_state
from tests.strategies import params, states

# eigenvalues at (0.01, 2, 5), cross-checked between Cardano and the dense eigensolver
LAMBDAS_BASE = (-4.4999873017, -10.500118521, -14.999894177)


def set_distance(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return min(np.abs(a - b[list(p)]).max() for p in itertools.permutations(range(len(b))))


def numeric_nonzero(p):
    w = np.linalg.eigvals(np.asarray(L.build_superoperator(p).matrix))
    return w[L.sort_eigenvalues(w)][1:]


class TestSuperoperator:
    def test_matrix_entries(self, base):
        m = L.build_superoperator(base).matrix
        g, wy, wz = 5.0, 0.01, 2.0
        assert m[0, 0] == pytest.approx(-10.0)
        assert m[0, 3] == pytest.approx(5.0)
        assert np.allclose(m[0], [-2 * g, -wy, -wy, g])
        assert np.allclose(m[1], [wy, -2j * wz - 1.5 * g, -g, -wy])

    def test_zero(self):
        m = L.build_superoperator(SystemParams(0, 0, 0, 0)).matrix
        assert np.array_equal(m, np.zeros((4, 4)))

    @given(params())
    def test_trace_preservation(self, p):
        m = L.build_superoperator(p).matrix
        assert np.abs(L.TRACE_ROW @ m).max() <= 1e-12

    @given(params(), states())
    def test_hermiticity_preservation(self, p, rho):
        out = L.build_superoperator(p).apply(rho.elements)
        assert np.abs(out - out.conj().T).max() <= 1e-12

    @given(params(), states())
    def test_matches_lindblad_form(self, p, rho):
        r = rho.elements
        h = p.hamiltonian()
        sm = np.array([[0, 0], [1, 0]])
        sy = np.array([[0, -1j], [1j, 0]])

        def d(o):
            od = o.conj().T
            return o @ r @ od - 0.5 * (od @ o @ r + r @ od @ o)

        direct = -1j * (h @ r - r @ h) + p.gamma_minus * d(sm) + p.gamma_y * d(sy)
        assert np.allclose(L.build_superoperator(p).apply(r), direct, atol=1e-12)


class TestNumericSpectrum:
    def test_base_values(self, base):
        spec = L.numeric_spectrum(L.build_superoperator(base))
        assert abs(spec.eigenvalues[0]) <= 1e-10
        assert np.allclose(spec.eigenvalues[1:], LAMBDAS_BASE, atol=1e-9)

    def test_slowest_rate_exact_without_transverse_field(self):
        spec = L.numeric_spectrum(L.build_superoperator(SystemParams.symmetric(0.0, 2.0, 5.0)))
        assert spec.eigenvalues[1] == pytest.approx(-4.5, abs=1e-12)

    def test_complex_pair_below_lep(self, weak):
        lam = L.numeric_spectrum(L.build_superoperator(weak)).eigenvalues
        assert abs(lam[1].imag) > 0.1
        assert lam[1] == pytest.approx(np.conj(lam[2]), abs=1e-12)
        assert lam[1].imag > 0

    @given(params(min_gamma=0.05))
    def test_invariants(self, p):
        sup = L.build_superoperator(p)
        try:
            spec = L.numeric_spectrum(sup)
        except NearDefectiveMatrixError:
            return
        lam = spec.eigenvalues
        assert np.all(lam.real <= 1e-10)
        assert abs(lam[0]) <= 1e-10
        assert spec.biorthogonality_error() <= 1e-9
        assert np.abs(spec.reconstruct() - sup.matrix).max() <= 1e-9 * max(1.0, np.abs(sup.matrix).max())
        # the nonzero spectrum is closed under conjugation
        assert set_distance(lam[1:], np.conj(lam[1:])) <= 1e-9
        assert np.allclose(spec.left_modes[0], np.eye(2))
        assert np.trace(spec.right_modes[0]).real == pytest.approx(1.0)

    def test_left_modes_are_adjoint_eigenoperators(self, base):
        sup = L.build_superoperator(base)
        spec = L.numeric_spectrum(sup)
        for lam, l, r in zip(spec.eigenvalues, spec.left_modes, spec.right_modes):
            assert np.abs(sup.apply_adjoint(l) - np.conj(lam) * l).max() <= 1e-9
            assert np.abs(sup.apply(r) - lam * r).max() <= 1e-9

    def test_near_defective_at_lep(self):
        g = L.find_lep(0.01, 2.0)
        with pytest.raises(NearDefectiveMatrixError):
            L.numeric_spectrum(L.build_superoperator(SystemParams.symmetric(0.01, 2.0, g)))

    def test_sort_tie_break(self):
        vals = np.array([-1 - 2j, -1 + 2j, 0.0, -1.0, -3.0])
        out = vals[L.sort_eigenvalues(vals)]
        assert list(out) == [0.0, -1.0, -1 + 2j, -1 - 2j, -3.0]

    def test_unequal_rates(self):
        p = SystemParams(0.3, 1.0, 2.0, 0.5)
        spec = L.numeric_spectrum(L.build_superoperator(p))
        assert spec.biorthogonality_error() <= 1e-9


class TestAnalyticEigenvalues:
    def test_base(self, base):
        assert np.allclose(L.analytic_eigenvalues(base), LAMBDAS_BASE, atol=1e-9)

    def test_vanishing_dissipation(self):
        lam = L.analytic_eigenvalues(SystemParams.symmetric(0.01, 2.0, 1e-7))
        assert np.abs(lam.real).max() <= 1e-6

    def test_random_against_eigensolver(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(200):
            p = SystemParams.symmetric(rng.uniform(0, 0.1), rng.uniform(0.5, 4), rng.uniform(0.1, 10))
            worst = max(worst, set_distance(L.analytic_eigenvalues(p), numeric_nonzero(p)))
        assert worst <= 1e-9

    @given(params(equal=True, min_gamma=0.05))
    def test_roots_of_characteristic_cubic(self, p):
        c = L.characteristic_coefficients(p)
        for lam in L.analytic_eigenvalues(p):
            val = np.polyval(c, lam)
            scale = sum(abs(ci) * abs(lam) ** (3 - i) for i, ci in enumerate(c))
            assert abs(val) <= 1e-12 * scale

    def test_depressed_coefficients(self, base):
        # substituting lambda = mu - 2 gamma into the cubic gives mu^3 + R mu + Q
        a2, a1, a0 = L.characteristic_coefficients(base)[1:]
        s = -2 * 5.0
        R = 3 * s * s + 2 * a2 * s + a1
        Q = s ** 3 + a2 * s * s + a1 * s + a0
        assert 3 * s + a2 == pytest.approx(0.0)
        cc = L.discriminant(base)
        assert cc.R == pytest.approx(R, rel=1e-14)
        assert cc.Q == pytest.approx(Q, rel=1e-12)

    def test_unequal_rates_refused(self):
        with pytest.raises(UnequalRatesUnsupportedError):
            L.analytic_eigenvalues(SystemParams(0.1, 1.0, 1.0, 2.0))

    def test_general_cubic(self):
        roots = L.cubic_roots(2.0, -12.0, 22.0, -12.0)
        assert set_distance(roots, [1.0, 2.0, 3.0]) <= 1e-12
        roots = L.cubic_roots(1.0, 0.0, 1.0, 0.0)
        assert set_distance(roots, [0.0, 1j, -1j]) <= 1e-15


class TestDiscriminant:
    def test_signs(self, base, weak):
        assert L.discriminant(weak).discriminant > 0
        assert L.discriminant(base).discriminant < 0
        assert L.discriminant(weak).n_real == 1
        assert L.discriminant(base).classification == "three-real"

    def test_definition(self, base):
        cc = L.discriminant(base)
        assert cc.discriminant == (cc.Q / 2) ** 2 + (cc.R / 3) ** 3

    def test_vanishes_at_lep(self):
        g = L.find_lep(0.01, 2.0)
        cc = L.discriminant(SystemParams.symmetric(0.01, 2.0, g))
        assert abs(cc.discriminant) <= 1e-8 * max((cc.Q / 2) ** 2, abs(cc.R / 3) ** 3)

    def test_classification_matches_eigensolver(self):
        rng = np.random.default_rng(11)
        checked = 0
        for _ in range(500):
            p = SystemParams.symmetric(rng.uniform(0, 0.5), rng.uniform(0.2, 4), rng.uniform(0.1, 10))
            cc = L.discriminant(p)
            if abs(cc.discriminant) < 1e-6 * max((cc.Q / 2) ** 2, abs(cc.R / 3) ** 3):
                continue
            n_real = int(np.sum(np.abs(numeric_nonzero(p).imag) < 1e-6))
            assert n_real == cc.n_real
            checked += 1
        assert checked > 450


class TestLep:
    def test_location(self):
        assert L.find_lep(0.01, 2.0) == pytest.approx(4.0, abs=0.05)

    def test_bisection_agrees(self):
        assert abs(L.find_lep(0.01, 2.0) - L.lep_by_bisection(0.01, 2.0, (3.0, 5.0))) <= 1e-8
        assert abs(L.find_lep(0.01, 2.0) - L.lep_by_bisection(0.01, 2.0)) <= 1e-8

    def test_bracketing(self):
        g = L.find_lep(0.01, 2.0)
        d = lambda x: L.discriminant(SystemParams.symmetric(0.01, 2.0, x)).discriminant  # noqa: E731
        assert d(g - 0.1) * d(g + 0.1) < 0

    def test_without_transverse_field(self):
        # coherence block eigenvalues -3g/2 +- sqrt(g^2 - 4 wz^2) coalesce at g = 2 wz
        assert L.find_lep(0.0, 2.0) == pytest.approx(4.0, abs=1e-12)

    def test_lep_cubic_is_discriminant(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            wy, wz, g = rng.uniform(0, 1), rng.uniform(0.1, 3), rng.uniform(0.1, 8)
            c = L.lep_cubic(wy, wz)
            lhs = np.polyval(c, g * g)
            rhs = -432.0 * L.discriminant(SystemParams.symmetric(wy, wz, g)).discriminant
            assert lhs == pytest.approx(rhs, rel=1e-9, abs=1e-9)

    def test_no_root(self):
        with pytest.raises(NoPhysicalRootError):
            L.find_lep(0.0, 0.0)


class TestAnalyticEigenmodes:
    @pytest.mark.parametrize("gamma", [1.0, 5.0, 8.0])
    def test_residuals(self, gamma):
        p = SystemParams.symmetric(0.01, 2.0, gamma)
        sup = L.build_superoperator(p)
        for lam in L.analytic_eigenvalues(p):
            l, r = L.analytic_eigenmodes(p, lam)
            assert np.abs(sup.apply(r) - lam * r).max() <= 1e-9
            assert np.abs(sup.apply_adjoint(l) - np.conj(lam) * l).max() <= 1e-9
            assert np.vdot(l, r) == pytest.approx(1.0, abs=1e-12)

    def test_parallel_to_numeric(self, base):
        spec = L.numeric_spectrum(L.build_superoperator(base))
        for k, lam in enumerate(L.analytic_eigenvalues(base), start=1):
            l, _ = L.analytic_eigenmodes(base, lam)
            a, b = L.vec(l), L.vec(spec.left_modes[k])
            a, b = a / np.linalg.norm(a), b / np.linalg.norm(b)
            # sine of the angle; arccos near 1 only resolves ~1e-8
            assert np.linalg.norm(a - np.vdot(b, a) * b) <= 1e-8

    def test_conjugate_pair_symmetry(self, weak):
        lam = L.analytic_eigenvalues(weak)
        pair = [x for x in lam if abs(x.imag) > 1e-9]
        (l1, r1), (l2, r2) = (L.analytic_eigenmodes(weak, x) for x in pair)
        for a, b in ((r1.conj().T, r2), (l1.conj().T, l2)):
            cos = abs(np.vdot(L.vec(a), L.vec(b))) / (np.linalg.norm(a) * np.linalg.norm(b))
            assert cos == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("gamma", [1.0, 5.0])
    def test_without_transverse_field(self, gamma):
        p = SystemParams.symmetric(0.0, 2.0, gamma)
        sup = L.build_superoperator(p)
        for lam in L.analytic_eigenvalues(p):
            l, r = L.analytic_eigenmodes(p, lam)
            assert np.abs(sup.apply(r) - lam * r).max() <= 1e-9
            assert np.abs(sup.apply_adjoint(l) - np.conj(lam) * l).max() <= 1e-9

    @pytest.mark.parametrize("wy", [1e-5, 1e-12, 1e-200])
    @pytest.mark.parametrize("gamma", [1.0, 5.0])
    def test_tiny_transverse_field(self, wy, gamma):
        p = SystemParams.symmetric(wy, 2.0, gamma)
        sup = L.build_superoperator(p)
        for lam in L.analytic_eigenvalues(p):
            l, r = L.analytic_eigenmodes(p, lam)
            assert np.abs(sup.apply(r) - lam * r).max() <= 1e-9 * np.abs(r).max()
            assert np.abs(sup.apply_adjoint(l) - np.conj(lam) * l).max() <= 1e-9

    def test_overlap_function(self, base):
        rho = thermal_state(base, 7.0)
        beta = np.tanh(base.omega / 7.0)
        for lam in L.analytic_eigenvalues(base):
            l, _ = L.analytic_eigenmodes(base, lam)
            f = L.left_mode_overlap_function(base, lam, beta)
            assert abs(f) / L.analytic_left_norm(base, lam) == pytest.approx(
                abs(np.vdot(L.vec(l), rho.vec())), rel=1e-9)

    def test_pole(self):
        # lambda = -gamma/2 solves the cubic exactly when omega_z = 0
        p = SystemParams.symmetric(1.0, 0.0, 1.0)
        with pytest.raises(EigenmodeSingularityError):
            L.analytic_eigenmodes(p, -0.5)
        with pytest.raises(EigenmodeSingularityError):
            L.left_mode_overlap_function(p, -0.5, 0.5)

    def test_analytic_spectrum(self, base):
        spec = L.analytic_spectrum(base)
        assert spec.biorthogonality_error() <= 1e-9
        num = L.numeric_spectrum(L.build_superoperator(base))
        rho = thermal_state(base, 7.0)
        assert np.allclose(spec.overlaps(rho.elements), num.overlaps(rho.elements), atol=1e-9)


class TestSteadyState:
    def test_no_transverse_field(self):
        rho = L.steady_state(SystemParams.symmetric(0.0, 2.0, 5.0))
        assert rho.elements[0, 1] == 0

    def test_base_value(self, base):
        sz = -(16 * 4 + 5 * 25) / (8 * 1e-4 + 48 * 4 + 15 * 25)
        rho = L.steady_state(base)
        assert (rho.elements[0, 0] - rho.elements[1, 1]).real == pytest.approx(sz, abs=1e-15)
        assert sz == pytest.approx(-1 / 3, abs=1e-5)

    @given(params(equal=True, min_gamma=0.05))
    def test_stationary_and_matches_null_space(self, p):
        sup = L.build_superoperator(p)
        rho = L.steady_state(p)
        assert np.abs(sup.apply(rho.elements)).max() <= 1e-12 * max(1.0, np.abs(sup.matrix).max())
        ns = null_space(np.asarray(sup.matrix))
        v = ns[:, 0] / (ns[0, 0] + ns[3, 0])
        assert np.allclose(rho.vec(), v, atol=1e-10)
        assert np.allclose(L.numeric_steady_state(sup).elements, rho.elements, atol=1e-10)

    def test_no_dissipation(self):
        with pytest.raises(NoUniqueSteadyStateError):
            L.steady_state(SystemParams.symmetric(0.01, 2.0, 0.0))
        with pytest.raises(NoUniqueSteadyStateError):
            L.numeric_steady_state(L.build_superoperator(SystemParams.symmetric(0.01, 2.0, 0.0)))


def test_spectrum_json(base):
    a = json.dumps(L.spectrum_to_json(base))
    assert a == json.dumps(L.spectrum_to_json(base))
    doc = json.loads(a)
    assert list(doc) == ["params", "eigenvalues", "discriminant", "lep_gamma"]
    assert doc["eigenvalues"][1]["re"] == pytest.approx(LAMBDAS_BASE[0], abs=1e-9)
