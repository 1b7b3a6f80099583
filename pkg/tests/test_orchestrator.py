import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoqrypt.localization import Scenario
from geoqrypt.orchestrator import (
    DecryptorSlot,
    DecryptorView,
    DeviceModel,
    InstructionEntry,
    InstructionIncomplete,
    MemorySlot,
    Refusal,
    Role,
    SessionConfig,
    SessionResult,
    bits_from_hex,
    bits_to_hex,
    combine_shares,
    decode_instructions,
    encode_instructions,
    intertwine,
    n_embedded,
    prob_no_token_moved,
    provision,
    relocation_attack,
    run_session,
    session_slot_count,
    split_instructions,
    untwine,
)
from geoqrypt.qdc import AttackModel
from geoqrypt.quantum import (
    BellOutcome,
    apply_gate,
    identify_bell,
    measure_qubit,
    sample_haar_unitaries,
)

bits = st.lists(st.integers(0, 1), max_size=80)
MSG = bits_from_hex("a5")


@pytest.fixture
def scenario():
    return Scenario.square(500.0, 1.8, p_c=0.99, t_d=10.0, seed=4)


def reduced_density(state):
    """Density matrix of qubit 1 of a two-qubit state."""
    psi = state.amplitudes.reshape(2, 2)  # (q1, q0)
    return psi @ psi.conj().T


class TestProvision:
    def test_counts_and_ids(self, rng):
        view, ledger = provision(5, 5, 3, 2, rng)
        assert sorted(s.slot_id for s in view.slots) == list(range(15))
        assert ledger.count(Role.QLV_TOKEN) == 3
        assert ledger.count(Role.DECOY) == 2

    def test_unscrambled_slots_are_psi_plus(self, rng):
        _, ledger = provision(3, 3, 2, 2, rng)
        for slot in ledger.slots.values():
            clean = apply_gate(slot.state, slot.obfuscation.conj().T, 1)
            assert identify_bell(clean) is BellOutcome.PSI_PLUS

    def test_decryptor_half_is_maximally_mixed(self, rng):
        # the local state carries no role information
        view, _ = provision(4, 4, 4, 4, rng)
        for slot in view.slots:
            assert np.allclose(reduced_density(slot.state), np.eye(2) / 2, atol=1e-12)

    def test_view_has_no_roles(self, rng):
        view, _ = provision(2, 2, 2, 2, rng)
        assert not hasattr(view.slots[0], "role")
        assert len(view.serialize()) == 4 + len(view) * (5 + 4 * 16)

    def test_empty(self, rng):
        view, ledger = provision(0, 0, 0, 0, rng)
        assert len(view) == 0 and not ledger.slots

    def test_role_multiset(self, rng):
        view, ledger = provision(8, 8, 4, 4, rng)
        assert len(view) == 24
        roles = list(ledger.roles().values())
        assert [roles.count(r) for r in Role] == [8, 8, 4, 4]

    def test_serialization_ignores_roles(self, rng):
        view, ledger = provision(3, 3, 3, 3, rng)
        roles = [s.role for s in ledger.slots.values()]
        rng.shuffle(roles)
        relabelled = [MemorySlot(s.slot_id, s.state, r, s.obfuscation)
                      for s, r in zip(ledger.slots.values(), roles)]
        rebuilt = DecryptorView(tuple(DecryptorSlot(m.slot_id, m.state)
                                      for m in sorted(relabelled, key=lambda m: m.slot_id)))
        assert rebuilt.serialize() == view.serialize()

    def test_qdc_and_qlv_slots_indistinguishable(self, rng):
        from scipy.stats import chi2_contingency

        _, ledger = provision(10_000, 0, 10_000, 0, rng)
        counts = np.zeros((2, 2))
        for slot in ledger.slots.values():
            row = 0 if slot.role is Role.QDC_MESSAGE_HALF else 1
            bit, _ = measure_qubit(slot.state, 1, rng)
            counts[row, bit] += 1
        assert chi2_contingency(counts).pvalue > 0.001

    def test_negative_count(self, rng):
        with pytest.raises(ValueError):
            provision(-1, 0, 1, 0, rng)


class TestInstructions:
    @given(st.integers(0, 40), st.integers(1, 64), st.integers(0, 2**32 - 1))
    def test_roundtrip(self, n, k, seed):
        rng = np.random.default_rng(seed)
        us = sample_haar_unitaries(rng, n)
        entries = [InstructionEntry(i, Role(i % 4), u, int(rng.integers(0, 256)))
                   for i, u in enumerate(us)]
        got, k_rx = decode_instructions(encode_instructions(entries, k))
        assert k_rx == k
        for a, b in zip(entries, got):
            assert (a.slot_id, a.role, a.instruction) == (b.slot_id, b.role, b.instruction)
            assert np.array_equal(a.unitary, b.unitary)

    def test_bit_flip_detected(self, rng):
        entries = [InstructionEntry(0, Role.DECOY, np.eye(2), 0xFF)]
        rec = bytearray(encode_instructions(entries, 16))
        rec[10] ^= 1
        with pytest.raises(InstructionIncomplete):
            decode_instructions(bytes(rec))

    def test_truncated(self):
        with pytest.raises(InstructionIncomplete):
            decode_instructions(b"GQI1")

    @given(st.binary(min_size=1, max_size=300), st.integers(2, 6), st.integers(0, 2**32 - 1))
    def test_shares_roundtrip(self, record, n, seed):
        shares = split_instructions(record, n, np.random.default_rng(seed))
        assert len(shares) == n
        assert combine_shares(shares) == record

    def test_missing_share_garbles(self, rng):
        record = encode_instructions([InstructionEntry(0, Role.DECOY, np.eye(2), 0xFF)], 16)
        shares = split_instructions(record, 3, rng)
        with pytest.raises(InstructionIncomplete):
            decode_instructions(combine_shares(shares[:2]))

    def test_single_share_is_uniform(self, rng):
        record = bytes(4096)
        share = split_instructions(record, 2, rng)[0].payload
        counts = np.bincount(np.frombuffer(share, np.uint8), minlength=256)
        assert counts.max() < 40

    def test_blocks(self, rng):
        s = split_instructions(bytes(130), 2, rng, block_size=64)[0]
        assert [len(b) for b in s.blocks()] == [64, 64, 2]

    def test_zero_record_two_identical_shares(self, rng):
        a, b = split_instructions(bytes(50), 2, rng)
        assert a.payload == b.payload

    def test_withholding_any_share_breaks_reconstruction(self, rng):
        for _ in range(200):
            us = sample_haar_unitaries(rng, 3)
            rec = encode_instructions([InstructionEntry(i, Role.DECOY, u, 0xFF)
                                       for i, u in enumerate(us)], 16)
            shares = split_instructions(rec, int(rng.integers(2, 6)), rng)
            drop = int(rng.integers(len(shares)))
            with pytest.raises(InstructionIncomplete):
                decode_instructions(combine_shares(shares[:drop] + shares[drop + 1:]))

    def test_need_two_stations(self, rng):
        with pytest.raises(ValueError):
            split_instructions(b"x", 1, rng)


class TestIntertwine:
    @given(bits, st.integers(0, 8), st.integers(1, 20), st.data())
    def test_roundtrip(self, message, n_qlv, k, data):
        n = n_embedded(len(message), n_qlv, k)
        embedded = data.draw(st.lists(st.integers(0, 1), min_size=n, max_size=n))
        stream = intertwine(message, embedded, k)
        assert len(stream) == len(message) + n
        assert untwine(stream, n, k) == (message, embedded)

    def test_positions(self):
        stream = intertwine([0] * 32, [1, 1], 16)
        assert [i for i, b in enumerate(stream) if b] == [16, 33]

    def test_short_message(self):
        assert n_embedded(5, 4, 16) == 1
        assert n_embedded(0, 4, 16) == 0


class TestHex:
    @given(st.binary(max_size=32))
    def test_roundtrip(self, data):
        assert bits_to_hex(bits_from_hex(data.hex())) == data.hex()

    def test_msb_first(self):
        assert bits_from_hex("80")[0] == 1


class TestSession:
    def test_honest_decrypts(self, scenario, rng):
        r = run_session(scenario, MSG, DeviceModel.honest(), 10.0, rng)
        assert r.decrypted == MSG and r.refusal is None
        assert r.result_line() == "accept,,a5,10"

    def test_time_locked_releases_nothing(self, scenario, rng):
        r = run_session(scenario, MSG, DeviceModel.honest(), 9.999, rng)
        assert r.refusal is Refusal.TIME_LOCKED
        assert r.shares_released == 0 and r.transcript is None
        assert r.result_line() == "reject,time_locked,,9.999"

    def test_relocated_fails_qlv(self, scenario, rng):
        dev = DeviceModel.relocated(100.0, (0.0, 1.0))
        assert run_session(scenario, MSG, dev, 10.0, rng).refusal is Refusal.QLV_FAILED

    def test_premeasure_detected(self, scenario, rng):
        r = run_session(scenario, MSG, DeviceModel(premeasure=True), 10.0, rng)
        assert r.refusal is Refusal.TAMPER_DETECTED

    @pytest.mark.parametrize("basis", ["Z", "X"])
    def test_channel_attack_detected(self, basis, scenario, rng):
        dev = DeviceModel(channel_attack=AttackModel.intercept_resend(basis))
        r = run_session(scenario, bits_from_hex("a5c3e1"), dev, 10.0, rng)
        assert r.refusal is Refusal.TAMPER_DETECTED

    def test_withheld_share(self, scenario, rng):
        cfg = SessionConfig(n_rs_shares=3)
        r = run_session(scenario, MSG, DeviceModel(withheld_share=1), 10.0, rng, cfg)
        assert r.refusal is Refusal.INSTRUCTION_INCOMPLETE

    def test_qlv_failure_takes_precedence(self, scenario):
        # find sessions whose stream survives premeasurement but whose tokens mismatch
        cfg = SessionConfig(control_fraction=0.0)
        dev = DeviceModel(displacement=(200.0, 0.0), premeasure=True)
        honest_pos = DeviceModel(premeasure=True)
        checked = 0
        for seed in range(200):
            probe = run_session(scenario, [1], honest_pos, 10.0, np.random.default_rng(seed), cfg)
            if probe.qlv_outcomes and not all(o[3] for o in probe.qlv_outcomes):
                assert probe.refusal is Refusal.TAMPER_DETECTED
                r = run_session(scenario, [1], dev, 10.0, np.random.default_rng(seed), cfg)
                assert r.refusal is Refusal.QLV_FAILED
                checked += 1
        assert checked > 10

    def test_aborted_stream_is_tamper(self, scenario):
        dev = DeviceModel(displacement=(200.0, 0.0), premeasure=True)
        for seed in range(50):
            r = run_session(scenario, MSG, dev, 10.0, np.random.default_rng(seed))
            if r.transcript is not None and r.transcript.aborted:
                assert r.refusal is Refusal.TAMPER_DETECTED
                assert r.qlv_verdict is None

    def test_in_stream_bases_used(self, scenario, rng):
        r = run_session(scenario, [1, 0] * 32, DeviceModel.honest(), 10.0, rng)
        assert len(r.qlv_outcomes) == 4 and all(o[3] for o in r.qlv_outcomes)

    def test_slot_count(self, scenario, rng):
        r = run_session(scenario, MSG, DeviceModel.honest(), 10.0, rng,
                        SessionConfig(control_fraction=0.0))
        expected = session_slot_count(8, SessionConfig())
        assert r.events[0] == f"provisioned slots={expected}"

    def test_result_exclusive(self):
        with pytest.raises(ValueError):
            SessionResult(None, None, None, None, 0.0)

    def test_needs_four_stations(self, rng):
        sc = Scenario(np.array([[10.0, 0], [0, 10.0], [-10.0, 0]]), (0, 0), 1e-9)
        with pytest.raises(ValueError):
            run_session(sc, MSG, DeviceModel.honest(), 0.0, rng)

    def test_honest_pass_rate(self, scenario):
        ok = sum(
            run_session(scenario, MSG, DeviceModel.honest(), 10.0,
                        np.random.default_rng(i)).decrypted is not None
            for i in range(400)
        )
        assert abs(ok / 400 - scenario.p_c) < 4 * math.sqrt(0.99 * 0.01 / 400) + 0.005


class TestRelocation:
    def test_probability_oracle(self):
        assert prob_no_token_moved(10, 2, 0) == 1.0
        assert prob_no_token_moved(10, 2, 9) == 0.0
        assert prob_no_token_moved(10, 2, 1) == pytest.approx(0.8)

    def test_hypergeometric_pass_rate(self, scenario):
        cfg = SessionConfig(control_fraction=0.0)
        total = session_slot_count(len(MSG), cfg)
        n_moved = total // 4
        trials = 600
        passed = sum(
            relocation_attack(scenario, MSG, n_moved, (300.0, 0.0),
                              np.random.default_rng(i), cfg).decrypted is not None
            for i in range(trials)
        )
        p = prob_no_token_moved(total, cfg.n_qlv, n_moved) * scenario.p_c
        assert abs(passed / trials - p) < 4 * math.sqrt(p * (1 - p) / trials)

    def test_everything_moved_fails(self, scenario, rng):
        r = relocation_attack(scenario, MSG, 10_000, (300.0, 0.0), rng)
        assert r.refusal is Refusal.QLV_FAILED
