import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from scipy.linalg import logm

from qmpemba import mpemba as M
from qmpemba.dynamics import evolve_expm
from qmpemba.errors import (
    AlreadyConvergedError,
    BracketFailureError,
    DefectiveSpectrumError,
    InvalidParameterError,
)
from qmpemba.liouvillian import find_lep, stationary_state, steady_state
from qmpemba.qstate import SystemParams, from_bloch, thermal_state
from tests.strategies import params, states, temperatures

# verified by Brent root of the numeric signed c2(T) and by the closed form
T_C_BASE = 11.130502823378736
T_SS_BASE = 5.770885167
# critical times (raw units) at threshold 1e-8 from bisection on ln D(t)
T_CRIT_BASE = {7.0: 2.37874, 9.0: 2.17893, 11.13: 1.08557, 18.0: 2.28924}


def trace_distance_oracle(a, b):
    return 0.5 * np.abs(np.linalg.eigvalsh(np.asarray(a) - np.asarray(b))).sum()


class TestDistances:
    @given(states(), states())
    def test_trace_distance(self, a, b):
        d = M.trace_distance(a, b)
        assert d == pytest.approx(trace_distance_oracle(a, b), abs=1e-12)
        assert d == pytest.approx(M.bloch_distance(a, b), abs=1e-12)
        assert 0 <= d <= 1 + 1e-12
        assert d == pytest.approx(M.trace_distance(b, a), abs=1e-15)

    @given(states(), states(), states())
    def test_triangle(self, a, b, c):
        assert M.trace_distance(a, c) <= M.trace_distance(a, b) + M.trace_distance(b, c) + 1e-12

    @settings(max_examples=40)
    @given(params(equal=True, min_gamma=0.5), temperatures, temperatures)
    def test_relative_entropy_oracle(self, p, t1, t2):
        a, b = thermal_state(p, t1), thermal_state(p, t2)
        ea, eb = np.asarray(a), np.asarray(b)
        if np.linalg.eigvalsh(ea).min() < 1e-8 or np.linalg.eigvalsh(eb).min() < 1e-8:
            return
        ref = np.trace(ea @ (logm(ea) - logm(eb))).real
        assert M.relative_entropy(a, b) == pytest.approx(ref, abs=1e-8)

    @given(states(), states())
    def test_relative_entropy_bounds(self, a, b):
        s = M.relative_entropy(a, b)
        assert s >= 0
        # Pinsker
        assert s >= 2 * M.trace_distance(a, b) ** 2 - 1e-9
        assert M.relative_entropy(a, a) == pytest.approx(0.0, abs=1e-9)

    def test_relative_entropy_support(self):
        up, down = from_bloch(0, 0, 1), from_bloch(0, 0, -1)
        assert M.relative_entropy(up, down) == math.inf
        assert M.relative_entropy(up, from_bloch(0, 0, 0)) == pytest.approx(math.log(2))

    def test_unknown_metric(self, base):
        with pytest.raises(InvalidParameterError):
            M.steady_state_temperature(base, metric="fidelity")


class TestOverlaps:
    def test_analytic_matches_numeric(self, base):
        for T in (0.5, 3.0, 7.0, 11.13, 40.0):
            for k in (2, 3, 4):
                a = M.overlap_ck(base, T, k, method="analytic")
                n = M.overlap_ck(base, T, k)
                assert a == pytest.approx(n, abs=1e-9)

    @settings(max_examples=30)
    @given(params(equal=True, min_gamma=0.1), temperatures)
    def test_analytic_matches_numeric_random(self, p, T):
        from qmpemba.errors import EigenmodeSingularityError, NearDefectiveMatrixError

        if p.omega_y == 0.0:
            return
        try:
            num = [M.overlap_ck(p, T, k) for k in (2, 3, 4)]
            ana = [M.overlap_ck(p, T, k, method="analytic") for k in (2, 3, 4)]
        except (EigenmodeSingularityError, NearDefectiveMatrixError):
            return
        # complex pairs may come out in either order
        assert sorted(num) == pytest.approx(sorted(ana), abs=1e-7)

    @pytest.mark.parametrize("gamma", [1.0, 5.0])
    def test_decoupled_without_transverse_field(self, gamma):
        p = SystemParams.symmetric(0.0, 2.0, gamma)
        curves = M.overlap_curves(p, np.linspace(0.1, 50, 20))
        # the population mode is the fastest for gamma = 5 and the slowest pair otherwise
        assert np.concatenate([curves[2], curves[3]]).max() <= 1e-12

    def test_bad_index(self, base):
        with pytest.raises(InvalidParameterError):
            M.overlap_ck(base, 1.0, 1)


class TestCriticalTemperature:
    def test_value(self, base):
        assert M.critical_temperature(base) == pytest.approx(T_C_BASE, abs=1e-9)

    def test_bisection_agrees(self, base):
        assert M.critical_temperature_bisection(base) == pytest.approx(T_C_BASE, abs=1e-8)

    def test_slowest_overlap_vanishes(self, base):
        assert M.overlap_ck(base, M.critical_temperature(base), 2) <= 1e-8

    def test_absent(self, weak):
        assert M.critical_temperature(weak) is None
        assert M.critical_temperature(SystemParams.symmetric(0.0, 2.0, 5.0)) is None
        assert M.critical_temperature_bisection(weak) is None

    def test_beta_eff(self, base):
        assert M.beta_eff(base, math.inf) == 0.0
        assert M.beta_eff(base, 1e-3) == pytest.approx(1.0)


class TestSteadyStateTemperature:
    def test_value(self, base):
        assert M.steady_state_temperature(base) == pytest.approx(T_SS_BASE, abs=1e-3)

    def test_metrics_agree(self, base):
        t_re = M.steady_state_temperature(base, "relative_entropy")
        assert t_re == pytest.approx(T_SS_BASE, abs=1e-3)

    def test_bracket_failure(self):
        p = SystemParams(0.0, 2.0, 5.0, 0.0)
        with pytest.raises(BracketFailureError) as exc:
            M.steady_state_temperature(p)
        assert exc.value.boundary == pytest.approx(1e-2)

    def test_minimum_is_a_minimum(self, base):
        t = M.steady_state_temperature(base)
        ss = steady_state(base)
        f = lambda T: M.trace_distance(ss, thermal_state(base, T))  # noqa: E731
        assert f(t) <= f(t - 0.01) and f(t) <= f(t + 0.01)


class TestCriticalTime:
    def test_frozen(self, base):
        for T, tc in T_CRIT_BASE.items():
            assert M.critical_time(base, thermal_state(base, T)) == pytest.approx(tc, abs=1e-5)

    def test_against_expm(self, base):
        # independent route: the distance from direct exponentiation is at threshold there
        rho = thermal_state(base, 7.0)
        tc = M.critical_time(base, rho)
        traj = evolve_expm(rho, base, [tc * 0.999, tc, tc * 1.001])
        d = traj.distances_to(steady_state(base))
        assert d[1] == pytest.approx(1e-8, rel=1e-5)
        assert d[0] > 1e-8 > d[2]

    def test_distance_curve(self, base):
        rho = thermal_state(base, 9.0)
        t = np.linspace(0, 2, 11)
        curve = M.distance_curve(base, rho)
        ref = evolve_expm(rho, base, t).distances_to(steady_state(base))
        assert np.allclose(curve(t), ref, atol=1e-12)

    def test_already_converged(self, base):
        with pytest.raises(AlreadyConvergedError):
            M.critical_time(base, steady_state(base))

    def test_bad_threshold(self, base):
        with pytest.raises(InvalidParameterError):
            M.critical_time(base, thermal_state(base, 1.0), threshold=0.0)

    def test_refuses_at_lep(self):
        p = SystemParams.symmetric(0.01, 2.0, find_lep(0.01, 2.0))
        with pytest.raises(DefectiveSpectrumError):
            M.critical_time(p, thermal_state(p, 3.0))


class TestZone:
    def test_zone(self, base):
        lo, hi = M.mpemba_zone(base)
        assert lo == pytest.approx(T_SS_BASE, abs=1e-3)
        assert hi == pytest.approx(T_C_BASE, abs=1e-9)

    def test_no_zone(self, weak):
        assert M.mpemba_zone(weak) is None
        assert M.mpemba_zone(SystemParams.symmetric(0.0, 2.0, 5.0)) is None
        assert M.mpemba_zone(SystemParams(0.01, 2.0, 5.0, 4.0)) is None

    def test_hotter_is_faster_inside(self, base):
        temps = np.linspace(6.0, 11.0, 11)
        tcs = [M.critical_time(base, thermal_state(base, T)) for T in temps]
        assert np.all(np.diff(tcs) < 0)

    def test_velocity(self, base):
        rho = thermal_state(base, 7.0)
        v = M.effective_velocity(base, 7.0)
        assert v == pytest.approx(M.trace_distance(rho, steady_state(base)) / T_CRIT_BASE[7.0], rel=1e-5)


class TestReport:
    def test_json(self, base):
        temps = [5.0, 11.13, 20.0]
        rep = M.build_report(base, temps)
        doc = rep.to_json()
        assert list(doc) == ["params", "T_ss", "T_c", "zone", "curves"]
        assert list(doc["curves"]) == ["T", "c2", "c3", "c4", "inv_tc", "v_eff"]
        assert doc["zone"] == pytest.approx([T_SS_BASE, T_C_BASE], abs=1e-3)
        assert doc["curves"]["inv_tc"][1] == pytest.approx(1 / T_CRIT_BASE[11.13], rel=1e-5)
        assert json.dumps(doc) == json.dumps(M.build_report(base, temps).to_json())

    def test_precomputed_points(self, base):
        pts = [M.temperature_point(base, T, 1e-8) for T in (5.0, 8.0)]
        assert M.build_report(base, [5.0, 8.0], points=pts).to_json() == M.build_report(base, [5.0, 8.0]).to_json()

    def test_unequal_rates(self):
        p = SystemParams(0.01, 2.0, 5.0, 3.0)
        rep = M.build_report(p, [5.0])
        assert rep.T_ss is None and rep.T_c is None and rep.zone is None
        assert stationary_state(p) is not None
