import math
from dataclasses import replace

import numpy as np
import pytest
import scipy.linalg
import sympy
from hypothesis import given, settings, strategies as st

from ionlogic import dynamics as dyn
from ionlogic.dynamics import (
    Model,
    MSDriveParams,
    PhaseLedger,
    carrier_hamiltonian,
    carrier_unitary,
    default_species,
    gate_drive,
    geometric_phase,
    ms_analytic,
    ms_hamiltonian,
    ms_hamiltonian_func,
    ms_unitary,
    propagate,
    sideband_coupling,
    spectator_shift,
)
from ionlogic.fockspace import DOWN, UP, QuantumState, RegisterShape, compose_state, fidelity, reduced_qubit_density

SPECIES = default_species()
phases = st.floats(0, 2 * math.pi, allow_nan=False)


def laguerre_oracle(n, eta, n_pad=80):
    """<n+1| exp(i eta (a + a^+)) |n> by matrix exponentiation."""
    a = np.diag(np.sqrt(np.arange(1, n_pad)), 1)
    x = a + a.T
    return abs(scipy.linalg.expm(1j * eta * x)[n + 1, n])


class TestSidebandCoupling:
    @pytest.mark.parametrize("n", [0, 1, 5, 12])
    def test_small_eta_limit(self, n):
        eta = 1e-4
        exact = sideband_coupling(n, 1, eta, 1.0, Model.EXACT_LAGUERRE)
        assert exact / (eta * math.sqrt(n + 1)) == pytest.approx(1.0, abs=1e-6)

    def test_be_ground_value(self):
        assert sideband_coupling(0, 1, 0.156, 1.0) == pytest.approx(0.15411, abs=5e-6)

    def test_n_dependence_beyond_lamb_dicke(self):
        ratio = sideband_coupling(4, 1, 0.265, 1.0) / sideband_coupling(0, 1, 0.265, 1.0)
        assert abs(ratio / math.sqrt(5) - 1) > 0.01

    @pytest.mark.parametrize("eta", [0.156, 0.265])
    @pytest.mark.parametrize("n", [0, 3, 9])
    def test_matches_displacement_matrix_element(self, eta, n):
        assert sideband_coupling(n, 1, eta, 1.0) == pytest.approx(laguerre_oracle(n, eta), rel=1e-9)

    def test_removal_matches_addition(self):
        assert sideband_coupling(3, -1, 0.2, 1.0) == sideband_coupling(2, 1, 0.2, 1.0)

    def test_lamb_dicke_model(self):
        assert sideband_coupling(3, 1, 0.2, 2.0, Model.LAMB_DICKE) == pytest.approx(0.4 * 2.0)

    @pytest.mark.parametrize("args", [(-1, 1), (0, -1), (2, 0)])
    def test_errors(self, args):
        with pytest.raises(ValueError):
            sideband_coupling(args[0], args[1], 0.1, 1.0)


class TestCarrier:
    def test_zero_angle(self):
        np.testing.assert_allclose(carrier_unitary(0, 1.3), np.eye(2))

    def test_two_pi_is_minus_identity(self):
        np.testing.assert_allclose(carrier_unitary(2 * math.pi, 0), -np.eye(2), atol=1e-15)

    def test_pi_flips_up(self):
        out = carrier_unitary(math.pi, 0) @ np.array([1, 0])
        assert abs(out[1]) == pytest.approx(1.0)

    def test_axis(self):
        # rotation about (cos phi, -sin phi, 0): H = (cos phi X - sin phi Y) / 2
        phi = 0.7
        gen = math.cos(phi) * dyn.PAULI["X"] - math.sin(phi) * dyn.PAULI["Y"]
        np.testing.assert_allclose(carrier_unitary(1.1, phi), scipy.linalg.expm(-0.55j * gen), atol=1e-14)

    def test_composite_full_transfer(self):
        u = carrier_unitary(math.pi / 2, 0) @ carrier_unitary(3 * math.pi / 2, math.pi / 2) @ carrier_unitary(
            math.pi / 2, 0)
        assert abs(u[1, 0]) ** 2 == pytest.approx(1.0, abs=1e-12)


class TestPhaseLedger:
    def test_stored_mod_two_pi(self):
        led = PhaseLedger(rf_r=(7.0, -1.0))
        assert led.rf_r[0] == pytest.approx(7.0 - 2 * math.pi)
        assert 0 <= led.rf_r[1] < 2 * math.pi

    @given(phases, phases, phases, phases)
    @settings(max_examples=60)
    def test_motional_and_spin_phase_reconstruct_drive_phases(self, r, b, path, drift):
        led = PhaseLedger(rf_r=(r, r), rf_b=(b, b), path=(path, 0.0), drift=(drift, 0.0))
        for j in (0, 1):
            assert math.cos(led.phi_s(j) + led.phi_m(j) - led.phi_r(j)) == pytest.approx(1.0, abs=1e-9)
            assert math.cos(led.phi_s(j) - led.phi_m(j) - led.phi_b(j)) == pytest.approx(1.0, abs=1e-9)
            assert -math.pi / 2 < led.phi_m(j) <= math.pi / 2 + 1e-12

    @given(phases, phases)
    @settings(max_examples=30)
    def test_path_moves_spin_phase_only(self, p0, p1):
        base = PhaseLedger.from_motional_phases((0.3, -0.2))
        moved = base.with_path((p0, p1))
        for j in (0, 1):
            assert moved.phi_m(j) == pytest.approx(base.phi_m(j), abs=1e-9)


class TestHamiltonian:
    shape = RegisterShape(4)

    def test_zero_rabi(self):
        d = replace(gate_drive(), rabi=(0.0, 0.0))
        assert not ms_hamiltonian(d, SPECIES, self.shape, 1e-6).any()

    @given(st.floats(0, 1e-4), phases, phases)
    @settings(max_examples=20, deadline=None)
    def test_hermitian(self, t, r, b):
        d = replace(gate_drive(), ledger=PhaseLedger(rf_r=(r, 0.1), rf_b=(b, 0.4)))
        for model in Model:
            h = ms_hamiltonian(replace(d, model=model), SPECIES, self.shape, t)
            assert np.abs(h - h.conj().T).max() < 1e-12

    def test_matrix_element_against_symbolic_expansion(self):
        """Expand the single-species bichromatic Hamiltonian symbolically."""
        n_f = 3
        om, dl, t, pr, pb = sympy.symbols("Omega delta t phi_r phi_b", real=True)
        a = sympy.zeros(n_f, n_f)
        for k in range(1, n_f):
            a[k - 1, k] = sympy.sqrt(k)
        sp_ = sympy.Matrix([[0, 1], [0, 0]])  # |up><down|
        term = om * sympy.kronecker_product(sp_, a) * sympy.exp(-sympy.I * (dl * t - pr)) + om * sympy.kronecker_product(
            sp_, a.T) * sympy.exp(sympy.I * (dl * t + pb))
        h_sym = term + term.H
        vals = {om: 1.7, dl: 2.3, t: 0.0, pr: 0.4, pb: 1.1}
        d = MSDriveParams(rabi=(1.7, 0.0), delta=2.3, duration=1.0,
                          ledger=PhaseLedger(rf_r=(0.4, 0.0), rf_b=(1.1, 0.0)))
        h = ms_hamiltonian(d, SPECIES, RegisterShape(n_f - 1), 0.0)
        for n in range(n_f - 1):
            sym = complex(h_sym[n_f + n + 1, n].subs(vals))  # <down,n+1|H|up,n>
            num = h[RegisterShape(n_f - 1).index(DOWN, UP, n + 1), RegisterShape(n_f - 1).index(UP, UP, n)]
            assert num == pytest.approx(sym, abs=1e-12)
            assert num == pytest.approx(1.7 * math.sqrt(n + 1) * np.exp(-0.4j), abs=1e-12)

    def test_sparse_and_dense_agree(self):
        d = gate_drive(dphi_m=0.4)
        h = ms_hamiltonian_func(d, SPECIES, self.shape)
        np.testing.assert_allclose(h(3e-6).toarray(), ms_hamiltonian(d, SPECIES, self.shape, 3e-6), atol=1e-9)


class TestPropagate:
    shape = RegisterShape(12)

    def test_zero_hamiltonian(self):
        s = compose_state(UP, DOWN, 2, self.shape)
        out = propagate(s, lambda t: np.zeros((self.shape.dim, self.shape.dim)), 1e-5)
        np.testing.assert_allclose(out.amplitudes, s.amplitudes)

    def test_carrier_matches_closed_form(self):
        rabi, phi, theta = 2 * math.pi * 1e5, 0.8, 1.3
        h = carrier_hamiltonian(rabi, phi)
        shape = RegisterShape(1)
        full = np.kron(np.kron(h, np.eye(2)), np.eye(shape.n_fock))
        s = compose_state(UP, UP, 0, shape)
        out = propagate(s, lambda t: full, theta / rabi)
        expect = np.kron(np.kron(carrier_unitary(theta, phi), np.eye(2)), np.eye(2)) @ s.amplitudes
        assert np.abs(out.amplitudes - expect).max() < 1e-8

    def test_ms_matches_oracle_and_preserves_norm(self):
        d = gate_drive(dphi_m=0.6)
        s = compose_state(UP, DOWN, 1, self.shape)
        out = propagate(s, ms_hamiltonian_func(d, SPECIES, self.shape), d.duration, steps=400)
        assert abs(out.norm() - 1) < 1e-9
        assert fidelity(out, ms_analytic(d, d.duration, s)) >= 1 - 1e-8

    def test_step_policy_failure(self):
        s = compose_state(UP, UP, 0, RegisterShape(1))
        h = np.kron(np.kron(carrier_hamiltonian(2e4, 0), np.eye(2)), np.eye(2))
        with pytest.raises(dyn.StepPolicyError):
            propagate(s, lambda t: h, 1e-3, steps=2, max_refinements=2)


class TestAnalyticOracle:
    shape = RegisterShape(20)

    def test_gate_condition_phases(self):
        d = gate_drive()
        assert geometric_phase(d.rabi[0], d.delta, 0.0) == pytest.approx((math.pi / 2, 0.0))

    def test_swap_at_pi(self):
        scale = 8 * math.pi * 0.3**2
        same, opp = geometric_phase(0.3, 1.0, math.pi)
        assert same == pytest.approx(0.0, abs=1e-15) and opp == pytest.approx(scale)

    @given(st.floats(0.01, 10), st.floats(0.1, 50), phases)
    def test_phase_sum(self, om, dl, dphi):
        assert sum(geometric_phase(om, dl, dphi)) == pytest.approx(8 * math.pi * om**2 / dl**2, rel=1e-12)

    def test_loop_closes(self):
        d = gate_drive(dphi_m=0.9)
        for s1 in (1, -1):
            for s2 in (1, -1):
                alpha, _ = dyn.branch_displacement(d, s1, s2, d.duration)
                assert abs(alpha) < 1e-12

    def test_bell_from_ground(self):
        d = gate_drive()
        out = ms_analytic(d, d.duration, compose_state(UP, UP, 0, self.shape))
        rho = reduced_qubit_density(out)
        # Phi+ up to local phases: all weight on uu/dd, equal split, full coherence
        assert rho[0, 0].real == pytest.approx(0.5, abs=1e-9)
        assert rho[3, 3].real == pytest.approx(0.5, abs=1e-9)
        assert abs(rho[0, 3]) == pytest.approx(0.5, abs=1e-9)

    def test_rejects_exact_model(self):
        d = gate_drive(model=Model.EXACT_LAGUERRE)
        with pytest.raises(ValueError):
            ms_analytic(d, d.duration, compose_state(UP, UP, 0, self.shape))


class TestSpectator:
    def test_disabled_is_zero(self):
        d = replace(gate_drive(), spectator=(5.0, 5.0))
        assert spectator_shift(d, 0) == 0.0

    def test_phase_accumulates(self):
        s, t = 2 * math.pi * 300.0, 35e-6
        d = replace(gate_drive(), rabi=(0.0, 0.0), spectator=(s, 0.0), spectator_enabled=True)
        shape = RegisterShape(2)
        plus = QuantumState.from_qubits(np.array([1, 0, 1, 0]), shape)
        out = ms_unitary(d, SPECIES, shape) @ plus.amplitudes
        rel = out[shape.index(UP, UP, 0)] / out[shape.index(DOWN, UP, 0)]
        assert np.angle(rel) == pytest.approx(-s * t, abs=1e-9)

    def test_small_shift_costs_about_1e_5(self):
        d = gate_drive()
        shape = RegisterShape(12)
        s0 = compose_state(UP, UP, 0, shape).amplitudes
        ref = reduced_qubit_density(QuantumState(ms_unitary(d, SPECIES, shape) @ s0, shape))
        target = np.linalg.eigh(ref)[1][:, -1]
        e = replace(d, spectator=(1e-3 * d.delta,) * 2, spectator_enabled=True)
        rho = reduced_qubit_density(QuantumState(ms_unitary(e, SPECIES, shape) @ s0, shape))
        loss = 1 - np.vdot(target, rho @ target).real
        assert 1e-6 < loss < 1e-4


class TestModelDifferences:
    def test_exact_model_leaves_residual_displacement_at_n4(self):
        shape = RegisterShape(16)
        out = {}
        for model in Model:
            d = gate_drive(model=model)
            for n in (0, 4):
                s = compose_state(UP, UP, n, shape).amplitudes
                st_out = QuantumState(ms_unitary(d, SPECIES, shape) @ s, shape)
                rho = reduced_qubit_density(st_out)
                out[model, n] = np.trace(rho @ rho).real
        assert out[Model.LAMB_DICKE, 4] == pytest.approx(1.0, abs=1e-6)
        assert out[Model.EXACT_LAGUERRE, 4] < out[Model.EXACT_LAGUERRE, 0] - 1e-3

    @given(phases, phases)
    @settings(max_examples=8, deadline=None)
    def test_path_offsets_conjugate_the_propagator(self, p0, p1):
        shape = RegisterShape(6)
        d = gate_drive(dphi_m=0.5)
        moved = replace(d, ledger=d.ledger.with_path((p0, p1)))
        v = dyn.path_phase_vector(moved.ledger, shape)
        expect = (v[:, None] * ms_unitary(d, SPECIES, shape)) * v.conj()[None, :]
        np.testing.assert_allclose(ms_unitary(moved, SPECIES, shape), expect, atol=1e-12)
