import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from swingpinn.system import (BusSystem, GenState, NoEquilibriumError, UnknownPresetError,
                              electrical_power, equilibrium, injected_power, preset_system,
                              swing_rhs)


def hand_power(system, delta, p):
    """Scalar evaluation of the power-flow sum, written out term by term."""
    out = []
    for i in range(system.n_gen):
        total = 0.0
        for n in range(system.n_bus):
            theta_n = delta[n] if n < system.n_gen else 0.0
            total += (system.voltage[i] * system.susceptance[i][n] * system.voltage[n]
                      * math.cos(delta[i] - theta_n - system.line_angle[i][n]))
        total += system.bus_load(p, i)
        out.append(total)
    return out


def hand_rhs(system, delta, omega, p):
    pm = system.mechanical_power(p)
    pe = hand_power(system, delta, p)
    acc = [(float(pm[i]) - pe[i] - system.damping[i] * omega[i]) / system.inertia[i]
           for i in range(system.n_gen)]
    return list(omega), acc


class TestElectricalPower:
    def test_smib_thirty_degrees(self, smib):
        assert electrical_power(smib, [math.pi / 6])[0] == pytest.approx(0.1, abs=1e-15)

    def test_smib_zero_angle(self, smib):
        assert abs(electrical_power(smib, [0.0])[0]) < 1e-15

    def test_two_bus_matches_hand_sum(self, two_bus):
        pe = electrical_power(two_bus, [0.3, 0.1], 0.9)
        assert np.max(np.abs(pe - hand_power(two_bus, [0.3, 0.1], 0.9))) <= 1e-12

    def test_dimension_mismatch(self, two_bus):
        with pytest.raises(ValueError):
            electrical_power(two_bus, [0.1])

    def test_lossless_exchange_is_antisymmetric(self, two_bus, rng):
        for _ in range(20):
            d = rng.uniform(-3, 3, size=2)
            line_1 = injected_power(two_bus, d, 0, 0.0) - two_bus.bus_load(0.0, 0)
            line_2 = injected_power(two_bus, d, 1, 0.0) - two_bus.bus_load(0.0, 1)
            assert abs(line_1 + line_2) <= 1e-12

    @given(st.floats(-10, 10), st.floats(-10, 10), st.integers(0, 1))
    def test_periodic_in_each_angle(self, a, b, k):
        system = preset_system("2bus")
        d = np.array([a, b])
        shifted = d.copy()
        shifted[k] += 2 * math.pi
        assert np.max(np.abs(electrical_power(system, d, 1.0)
                             - electrical_power(system, shifted, 1.0))) <= 1e-12


class TestSwingRhs:
    def test_equilibrium_is_stationary(self, smib, two_bus):
        for system, p in ((smib, 0.13), (smib, 0.08)):
            d = equilibrium(system, p)
            rate = swing_rhs(system, GenState(d, np.zeros(system.n_gen)), p)
            assert np.all(rate.delta == 0.0)
            assert np.max(np.abs(rate.omega)) <= 1e-10

    def test_flat_start_acceleration(self, smib):
        rate = swing_rhs(smib, GenState([0.0], [0.0]), 0.1)
        assert rate.omega[0] == pytest.approx(0.25, abs=1e-15)

    def test_random_states_match_hand_rearrangement(self, smib, two_bus, rng):
        for system in (smib, two_bus):
            lo, hi = system.p_range
            for _ in range(20):
                d = rng.uniform(-2, 2, system.n_gen)
                w = rng.uniform(-1, 1, system.n_gen)
                p = rng.uniform(lo, hi)
                rate = swing_rhs(system, GenState(d, w), p)
                ref_d, ref_w = hand_rhs(system, d, w, p)
                assert np.max(np.abs(rate.delta - ref_d)) <= 1e-12
                assert np.max(np.abs(rate.omega - ref_w)) <= 1e-12

    def test_affine_in_omega(self, two_bus, rng):
        d = rng.uniform(-1, 1, 2)
        w0, w1 = rng.uniform(-1, 1, 2), rng.uniform(-1, 1, 2)
        acc = [swing_rhs(two_bus, GenState(d, w0 + s * (w1 - w0)), 1.0).omega for s in (0, 0.5, 1)]
        assert np.max(np.abs(acc[1] - 0.5 * (acc[0] + acc[2]))) <= 1e-12

    def test_non_finite_state(self, smib):
        with pytest.raises(ValueError):
            swing_rhs(smib, GenState([np.nan], [0.0]), 0.1)


class TestEquilibrium:
    def test_arcsin_half(self, smib):
        assert equilibrium(smib, 0.1)[0] == pytest.approx(math.pi / 6, abs=1e-12)

    def test_zero_power(self, smib):
        assert equilibrium(smib, 0.0)[0] == 0.0

    def test_beyond_transfer_limit(self, smib):
        with pytest.raises(NoEquilibriumError):
            equilibrium(smib, 0.25)

    def test_two_bus_inside_limit_balances(self, two_bus):
        d = equilibrium(two_bus, 0.3)
        pm = np.array(two_bus.mechanical_power(0.3))
        assert np.max(np.abs(electrical_power(two_bus, d, 0.3) - pm)) <= 1e-10

    def test_two_bus_preset_range_has_no_equilibrium(self, two_bus):
        # half the load exceeds the 0.2 p.u. line limit over the whole range
        with pytest.raises(NoEquilibriumError):
            equilibrium(two_bus, 0.51)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-0.199, 0.199))
    def test_power_balance_property(self, pm):
        system = preset_system("1bus")
        d = equilibrium(system, pm)
        assert abs(electrical_power(system, d)[0] - pm) <= 1e-10
        assert d[0] == pytest.approx(math.asin(pm / 0.2), abs=1e-9)


class TestPresets:
    def test_smib(self, smib):
        assert smib.inertia[0] == 0.4
        assert smib.p_range == (0.08, 0.18)
        assert smib.t_span == (0.0, 20.0)
        assert list(smib.inertia_known) == [False]

    def test_two_bus(self, two_bus):
        assert list(two_bus.voltage) == [1.0, 1.0]
        assert two_bus.susceptance[0, 1] == two_bus.susceptance[1, 0] == 0.2
        assert two_bus.inertia[1] == 0.132629
        assert two_bus.p_range == (0.51, 1.51)
        assert two_bus.t_span == (0.0, 1.0)
        assert two_bus.unknown_inertia == [1]

    def test_unknown_preset(self):
        with pytest.raises(UnknownPresetError):
            preset_system("3bus")

    def test_presets_satisfy_invariants(self, smib, two_bus):
        for s in (smib, two_bus):
            assert np.all(s.inertia > 0) and np.all(s.damping >= 0)
            assert np.array_equal(s.susceptance, s.susceptance.T)
            assert np.all(np.diag(s.susceptance) == 0)
            assert s.p_range[0] < s.p_range[1] and s.t_span[0] == 0 < s.t_span[1]

    def test_invalid_system_rejected(self, smib):
        d = smib.to_dict()
        with pytest.raises(ValueError):
            BusSystem.from_dict({**d, "inertia": [-0.4]})
        with pytest.raises(ValueError):
            BusSystem.from_dict({**d, "susceptance": [[0.0, 0.2], [0.3, 0.0]]})
        with pytest.raises(ValueError):
            BusSystem.from_dict({**d, "p_range": (0.2, 0.1)})

    def test_dict_round_trip(self, two_bus):
        again = BusSystem.from_dict(two_bus.to_dict())
        assert again.to_dict() == two_bus.to_dict()

    def test_system_is_immutable(self, smib):
        with pytest.raises(Exception):
            smib.inertia[0] = 1.0
