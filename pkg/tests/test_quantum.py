import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import stats

from geoqrypt.quantum import (
    BELL_ORDER,
    H,
    I2,
    X,
    Z,
    BellOutcome,
    GaussianState,
    MalformedCovariance,
    PureState,
    QuantumError,
    apply_gate,
    bell_measure,
    bell_probabilities,
    check_unitary,
    coherent_state_moments,
    fidelity,
    identify_bell,
    is_physical,
    make_bell_pair,
    measure_qubit,
    sample_haar_unitaries,
    sample_haar_unitary,
    symplectic_form,
    symplectic_spectrum_pt,
    teleport,
    tmsv_covariance,
)

seeds = st.integers(0, 2**32 - 1)


def random_state(rng, n):
    v = rng.standard_normal(2**n) + 1j * rng.standard_normal(2**n)
    return PureState.from_amplitudes(v, normalize=True)


def full_operator(gate, target, n):
    """Dense operator on n qubits; qubit n-1 is the leftmost kron factor."""
    op = np.eye(1)
    for q in reversed(range(n)):
        op = np.kron(op, gate if q == target else I2)
    return op


def bell_projector(kind, q1, q2, n):
    """|B><B| on (q1, q2) built entry by entry from basis indices."""
    vec = make_bell_pair(kind).amplitudes  # index b_q1 + 2 b_q2
    dim = 2**n
    p = np.zeros((dim, dim), dtype=complex)
    for i in range(dim):
        for j in range(dim):
            rest_i = i & ~((1 << q1) | (1 << q2))
            rest_j = j & ~((1 << q1) | (1 << q2))
            if rest_i != rest_j:
                continue
            a = ((i >> q1) & 1) + 2 * ((i >> q2) & 1)
            b = ((j >> q1) & 1) + 2 * ((j >> q2) & 1)
            p[i, j] = vec[a] * vec[b].conj()
    return p


class TestPureState:
    def test_basis_is_little_endian(self):
        s = PureState.basis("100")
        assert s.amplitudes[1] == 1

    def test_rejects_unnormalized(self):
        with pytest.raises(QuantumError):
            PureState(1, np.array([1.0, 1.0]))

    def test_rejects_wrong_length(self):
        with pytest.raises(QuantumError):
            PureState(2, np.array([1.0, 0.0]))

    def test_amplitudes_are_read_only(self):
        s = PureState.basis("0")
        with pytest.raises(ValueError):
            s.amplitudes[0] = 0

    def test_tensor_puts_self_low(self):
        one, zero = PureState.basis("1"), PureState.basis("0")
        assert one.tensor(zero).amplitudes[1] == 1


class TestGates:
    def test_non_unitary_rejected(self):
        with pytest.raises(QuantumError):
            check_unitary(np.array([[1, 1], [0, 1]]))

    @given(seeds, st.integers(1, 4), st.data())
    def test_apply_gate_matches_dense_kron(self, seed, n, data):
        rng = np.random.default_rng(seed)
        target = data.draw(st.integers(0, n - 1))
        u = sample_haar_unitary(rng)
        s = random_state(rng, n)
        expected = full_operator(u, target, n) @ s.amplitudes
        assert np.allclose(apply_gate(s, u, target).amplitudes, expected, atol=1e-12)

    @given(seeds, st.integers(1, 4), st.data())
    def test_gate_preserves_norm(self, seed, n, data):
        rng = np.random.default_rng(seed)
        target = data.draw(st.integers(0, n - 1))
        out = apply_gate(random_state(rng, n), sample_haar_unitary(rng), target)
        assert abs(np.linalg.norm(out.amplitudes) - 1) < 1e-12

    def test_target_out_of_range(self):
        with pytest.raises(IndexError):
            apply_gate(PureState.basis("00"), X, 2)


class TestHaar:
    def test_unitary(self, rng):
        for u in sample_haar_unitaries(rng, 200):
            check_unitary(u)

    def test_first_entry_modulus_uniform(self, rng):
        # for Haar U(2), |U_00|^2 ~ Uniform(0, 1)
        u = sample_haar_unitaries(rng, 4000)
        assert stats.kstest(np.abs(u[:, 0, 0]) ** 2, "uniform").pvalue > 0.001

    def test_phase_uniform(self, rng):
        u = sample_haar_unitaries(rng, 4000)
        ph = (np.angle(u[:, 0, 0]) + np.pi) / (2 * np.pi)
        assert stats.kstest(ph, "uniform").pvalue > 0.001


class TestBell:
    @pytest.mark.parametrize("kind", BELL_ORDER)
    def test_pairs_identified(self, kind):
        assert identify_bell(make_bell_pair(kind)) is kind

    @pytest.mark.parametrize("kind", BELL_ORDER)
    def test_pauli_bits_reproduce_state(self, kind):
        x, z = kind.pauli_bits
        s = make_bell_pair(BellOutcome.PHI_PLUS)
        if z:
            s = apply_gate(s, Z, 0)
        if x:
            s = apply_gate(s, X, 0)
        assert fidelity(s, make_bell_pair(kind)) > 1 - 1e-12

    def test_product_state_not_bell(self):
        assert identify_bell(PureState.basis("01")) is None

    @given(seeds, st.sampled_from([(0, 1), (1, 0), (0, 2), (2, 1), (1, 2)]))
    def test_probabilities_match_projectors(self, seed, pair):
        rng = np.random.default_rng(seed)
        s = random_state(rng, 3)
        probs = bell_probabilities(s, *pair)
        for kind in BELL_ORDER:
            p = bell_projector(kind, *pair, 3)
            oracle = float(np.vdot(s.amplitudes, p @ s.amplitudes).real)
            assert probs[kind] == pytest.approx(oracle, abs=1e-12)
        assert sum(probs.values()) == pytest.approx(1.0, abs=1e-12)

    @given(seeds)
    def test_measure_collapses_onto_projector(self, seed):
        rng = np.random.default_rng(seed)
        s = random_state(rng, 3)
        kind, post = bell_measure(s, 0, 2, rng)
        p = bell_projector(kind, 0, 2, 3)
        expected = p @ s.amplitudes
        expected /= np.linalg.norm(expected)
        assert abs(np.vdot(expected, post.amplitudes)) ** 2 == pytest.approx(1, abs=1e-12)

    def test_measurement_statistics(self, rng):
        s = random_state(rng, 2)
        probs = bell_probabilities(s, 0, 1)
        counts = {k: 0 for k in BELL_ORDER}
        for _ in range(4000):
            counts[bell_measure(s, 0, 1, rng)[0]] += 1
        obs = [counts[k] for k in BELL_ORDER]
        exp = [4000 * probs[k] for k in BELL_ORDER]
        keep = [i for i, e in enumerate(exp) if e > 5]
        obs = [obs[i] for i in keep]
        exp = np.array([exp[i] for i in keep])
        exp *= sum(obs) / exp.sum()
        assert stats.chisquare(obs, exp).pvalue > 0.001


class TestMeasureQubit:
    def test_z_eigenstate_deterministic(self, rng):
        for _ in range(20):
            bit, _ = measure_qubit(PureState.basis("01"), 1, rng)
            assert bit == 1

    def test_x_basis_plus_state(self, rng):
        plus = apply_gate(PureState.basis("0"), H, 0)
        assert all(measure_qubit(plus, 0, rng, "X")[0] == 0 for _ in range(20))

    def test_psi_plus_anticorrelated(self, rng):
        pair = make_bell_pair(BellOutcome.PSI_PLUS)
        for _ in range(50):
            a, post = measure_qubit(pair, 0, rng)
            b, _ = measure_qubit(post, 1, rng)
            assert a != b

    def test_unknown_basis(self, rng):
        with pytest.raises(QuantumError):
            measure_qubit(PureState.basis("0"), 0, rng, "Y")


class TestTeleport:
    @pytest.mark.parametrize("kind", BELL_ORDER)
    def test_fidelity_any_resource(self, kind, rng):
        for _ in range(25):
            payload = PureState(1, sample_haar_unitary(rng)[:, 0])
            _, out = teleport(payload, make_bell_pair(kind), rng)
            assert abs(fidelity(out, payload) - 1) < 1e-10

    def test_rejects_non_bell_resource(self, rng):
        with pytest.raises(QuantumError):
            teleport(PureState.basis("0"), PureState.basis("00"), rng)

    def test_rejects_multi_qubit_payload(self, rng):
        with pytest.raises(QuantumError):
            teleport(PureState.basis("00"), make_bell_pair(), rng)

    @given(seeds)
    def test_corrections_are_bits(self, seed):
        rng = np.random.default_rng(seed)
        bits, out = teleport(PureState.basis("1"), make_bell_pair(BellOutcome.PHI_PLUS), rng)
        assert set(bits) <= {0, 1}
        assert out.n_qubits == 1


class TestGaussian:
    def test_vacuum_physical(self):
        assert is_physical(np.eye(4))

    def test_too_squeezed_unphysical(self):
        assert not is_physical(np.diag([0.5, 0.5]))

    def test_coherent_state_mean(self):
        g = coherent_state_moments(1 + 2j)
        assert np.allclose(g.first_moments, [2, 4])
        assert np.allclose(g.cov, np.eye(2))

    def test_asymmetric_rejected(self):
        cov = np.eye(4)
        cov[0, 1] = 0.1
        with pytest.raises(MalformedCovariance):
            GaussianState(2, np.zeros(4), cov)

    def test_params_recorded(self):
        g = tmsv_covariance(0.5)
        assert g.params["v"] == pytest.approx(math.cosh(1.0))
        assert g.params["lambda"] == pytest.approx(math.tanh(0.5))

    def test_negative_r_rejected(self):
        with pytest.raises(QuantumError):
            tmsv_covariance(-0.1)

    @given(st.floats(0.0, 2.0))
    def test_spectrum_matches_numerical_oracle(self, r):
        g = tmsv_covariance(r)
        pt = np.diag([1.0, 1.0, 1.0, -1.0])
        cov_pt = pt @ g.cov @ pt
        oracle = np.sort(np.abs(np.linalg.eigvals(1j * symplectic_form(2) @ cov_pt)))
        nu_plus, nu_minus = symplectic_spectrum_pt(g)
        assert nu_minus == pytest.approx(oracle[0], rel=1e-8)
        assert nu_plus == pytest.approx(oracle[-1], rel=1e-8)

    @given(st.floats(0.0, 3.0))
    def test_entanglement_witness(self, r):
        _, nu_minus = symplectic_spectrum_pt(tmsv_covariance(r))
        assert nu_minus == pytest.approx(math.exp(-2 * r), rel=1e-10)
        if r > 1e-6:
            assert nu_minus < 1
        else:
            assert nu_minus <= 1

    def test_non_standard_form_rejected(self):
        cov = np.eye(4)
        cov[0, 0] = 2.0
        with pytest.raises(MalformedCovariance):
            symplectic_spectrum_pt(GaussianState(2, np.zeros(4), cov))


S = 1 / math.sqrt(2)


class TestSpecExamples:
    @pytest.mark.parametrize("kind,amps", [
        (BellOutcome.PSI_PLUS, [0, S, S, 0]),
        (BellOutcome.PSI_MINUS, [0, S, -S, 0]),
        (BellOutcome.PHI_PLUS, [S, 0, 0, S]),
    ])
    def test_bell_amplitudes(self, kind, amps):
        assert np.allclose(make_bell_pair(kind).amplitudes, amps, atol=1e-15)

    def test_sigma_z_maps_psi_plus_to_minus(self):
        out = apply_gate(make_bell_pair(BellOutcome.PSI_PLUS), Z, 0)
        assert fidelity(out, make_bell_pair(BellOutcome.PSI_MINUS)) == pytest.approx(1)
        same = apply_gate(make_bell_pair(BellOutcome.PSI_PLUS), I2, 0)
        assert fidelity(same, make_bell_pair(BellOutcome.PSI_PLUS)) == pytest.approx(1)

    def test_hadamard_on_zero(self):
        assert np.allclose(apply_gate(PureState.basis("0"), H, 0).amplitudes, [S, S])

    @pytest.mark.parametrize("kind", [BellOutcome.PSI_PLUS, BellOutcome.PSI_MINUS])
    def test_bell_eigenstates_deterministic(self, kind, rng):
        assert all(bell_measure(make_bell_pair(kind), 0, 1, rng)[0] is kind for _ in range(100))

    def test_zero_zero_splits_phi(self, rng):
        n = 10_000
        outcomes = [bell_measure(PureState.basis("00"), 0, 1, rng)[0] for _ in range(n)]
        plus = outcomes.count(BellOutcome.PHI_PLUS)
        assert plus + outcomes.count(BellOutcome.PHI_MINUS) == n
        assert abs(plus - n / 2) < 3 * math.sqrt(n / 4)

    def test_teleport_basis_and_plus(self, rng):
        zero = PureState.basis("0")
        plus = apply_gate(zero, H, 0)
        for payload in (zero, plus):
            _, out = teleport(payload, make_bell_pair(BellOutcome.PHI_PLUS), rng)
            assert fidelity(out, payload) == pytest.approx(1, abs=1e-12)

    def test_teleport_corrections_uniform(self, rng):
        payload = PureState.basis("1")
        counts = np.zeros(4)
        for _ in range(10_000):
            (x, z), _ = teleport(payload, make_bell_pair(BellOutcome.PSI_MINUS), rng)
            counts[x + 2 * z] += 1
        assert np.all(np.abs(counts - 2500) < 3 * math.sqrt(10_000 * 0.25 * 0.75))

    def test_haar_moment(self, rng):
        u = sample_haar_unitaries(rng, 100_000)
        assert np.mean(np.abs(u[:, 0, 0]) ** 2) == pytest.approx(0.5, abs=0.01)
        assert np.max(np.abs(np.conj(np.swapaxes(u, 1, 2)) @ u - np.eye(2))) < 1e-12

    def test_obfuscation_roundtrip(self, rng):
        for u in sample_haar_unitaries(rng, 100):
            s = random_state(rng, 2)
            back = apply_gate(apply_gate(s, u, 1), u.conj().T, 1)
            assert np.allclose(back.amplitudes, s.amplitudes, atol=1e-12)

    def test_tmsv_values(self):
        assert np.allclose(tmsv_covariance(0.0).cov, np.eye(4))
        assert tmsv_covariance(0.5).params["v"] == pytest.approx(1.5431, abs=1e-4)
        lam = tmsv_covariance(2.0).params["lambda"]
        assert 0 <= lam <= 1

    def test_vacuum_spectrum(self):
        assert symplectic_spectrum_pt(tmsv_covariance(0.0)) == pytest.approx((1.0, 1.0))

    @given(st.floats(0, 2.5))
    def test_spectrum_product_and_plus(self, r):
        nu_plus, nu_minus = symplectic_spectrum_pt(tmsv_covariance(r))
        assert nu_plus * nu_minus == pytest.approx(1, abs=1e-10)
        assert nu_plus == pytest.approx(math.exp(2 * r), rel=1e-10)

    def test_half_squeezing_value(self):
        assert abs(symplectic_spectrum_pt(tmsv_covariance(0.5))[1] - math.exp(-1)) < 1e-10

    @pytest.mark.parametrize("alpha,mu", [(0, [0, 0]), (1, [2, 0]), (1j, [0, 2])])
    def test_coherent_moments(self, alpha, mu):
        assert np.allclose(coherent_state_moments(alpha).first_moments, mu)

    def test_fidelity_examples(self):
        zero, one = PureState.basis("0"), PureState.basis("1")
        assert fidelity(zero, zero) == 1
        assert fidelity(zero, one) == 0
        assert fidelity(zero, apply_gate(zero, H, 0)) == pytest.approx(0.5)
