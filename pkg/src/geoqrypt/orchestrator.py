"""End-to-end geo-encryption sessions.

The server provisions the decryptor's memory with halves of Bell pairs,
each scrambled by a private Haar-random unitary, in shuffled order.  Which
slot serves which purpose, and how to unscramble it, is only revealed by
the instruction record, XOR-shared across several reference stations and
released no earlier than the decryption epoch ``t_d``.  Some QLV basis
choices travel inside the QDC stream itself, so location verification can
only complete after the message has been decoded, and the plaintext is
released only when verification passes.

Pair convention: qubit 0 is the server's half, qubit 1 the decryptor's.
"""

from __future__ import annotations

import enum
import hashlib
import math
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .localization import Scenario, sample_tdoa
from .qdc import NO_ATTACK, AttackModel, QdcTranscript, TamperDetected, draw_schedule, execute_rounds
from .qlv import MIN_STATIONS, Method, Verdict, verify_many
from .quantum import (
    BellOutcome,
    PureState,
    apply_gate,
    make_bell_pair,
    measure_qubit,
    sample_haar_unitaries,
)


class Role(enum.IntEnum):
    QDC_MESSAGE_HALF = 0
    QDC_TELEPORT_HALF = 1
    QLV_TOKEN = 2
    DECOY = 3


class Refusal(enum.Enum):
    QLV_FAILED = "qlv_failed"
    TIME_LOCKED = "time_locked"
    TAMPER_DETECTED = "tamper_detected"
    INSTRUCTION_INCOMPLETE = "instruction_incomplete"


class InstructionIncomplete(Exception):
    pass


# instruction byte per role
DATA_ROUND, CONTROL_ROUND = 0, 1
BASIS_Z, BASIS_X, BASIS_IN_STREAM = 0, 1, 2
NO_INSTRUCTION = 0xFF

_MAGIC = b"GQI1"
_HEADER = struct.Struct("<4sII")  # magic, entry count, intertwine k
_ENTRY = struct.Struct("<IB8dB")
_TAG_LEN = 32


# --- memory ----------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class DecryptorSlot:
    """What the decryptor can see: a slot id and the stored state."""

    slot_id: int
    state: PureState


@dataclass(frozen=True, eq=False)
class DecryptorView:
    slots: tuple[DecryptorSlot, ...]

    def __len__(self) -> int:
        return len(self.slots)

    def serialize(self) -> bytes:
        out = bytearray(struct.pack("<I", len(self.slots)))
        for slot in self.slots:
            out += struct.pack("<IB", slot.slot_id, slot.state.n_qubits)
            out += slot.state.amplitudes.astype("<c16").tobytes()
        return bytes(out)


@dataclass(frozen=True, eq=False)
class MemorySlot:
    slot_id: int
    state: PureState
    role: Role
    obfuscation: np.ndarray


@dataclass
class ServerLedger:
    slots: dict[int, MemorySlot]
    # slot ids per role in provisioning order (round order for QDC roles)
    order: dict[Role, list[int]]

    def roles(self) -> dict[int, Role]:
        return {sid: s.role for sid, s in self.slots.items()}

    def count(self, role: Role) -> int:
        return len(self.order[role])


def provision(
    n_message: int,
    n_teleport: int,
    n_qlv: int,
    n_decoy: int,
    rng: np.random.Generator,
) -> tuple[DecryptorView, ServerLedger]:
    """Fill a decryptor memory with obfuscated Bell-pair halves in random order."""
    counts = {
        Role.QDC_MESSAGE_HALF: n_message,
        Role.QDC_TELEPORT_HALF: n_teleport,
        Role.QLV_TOKEN: n_qlv,
        Role.DECOY: n_decoy,
    }
    if any(c < 0 for c in counts.values()):
        raise ValueError("slot counts must be non-negative")
    plan = [role for role, c in counts.items() for _ in range(c)]
    ids = rng.permutation(len(plan))
    pair = make_bell_pair(BellOutcome.PSI_PLUS)
    slots: dict[int, MemorySlot] = {}
    order: dict[Role, list[int]] = {role: [] for role in Role}
    unitaries = sample_haar_unitaries(rng, len(plan))
    for role, sid, u in zip(plan, ids, unitaries):
        slots[int(sid)] = MemorySlot(int(sid), apply_gate(pair, u, 1), role, u)
        order[role].append(int(sid))
    view = DecryptorView(
        tuple(DecryptorSlot(sid, slots[sid].state) for sid in sorted(slots))
    )
    return view, ServerLedger(slots, order)


# --- instructions ----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class InstructionEntry:
    slot_id: int
    role: Role
    unitary: np.ndarray
    instruction: int


def encode_instructions(entries: Sequence[InstructionEntry], intertwine_k: int) -> bytes:
    """Length-prefixed record; the unitary is 8 little-endian doubles (re, im row-major)."""
    body = bytearray(_HEADER.pack(_MAGIC, len(entries), intertwine_k))
    for e in entries:
        u = np.asarray(e.unitary, dtype=complex).reshape(-1)
        flat = [v for z in u for v in (z.real, z.imag)]
        body += _ENTRY.pack(e.slot_id, int(e.role), *flat, e.instruction)
    return bytes(body) + hashlib.sha256(body).digest()


def decode_instructions(record: bytes) -> tuple[list[InstructionEntry], int]:
    if len(record) < _HEADER.size + _TAG_LEN:
        raise InstructionIncomplete("instruction record too short")
    body, tag = record[:-_TAG_LEN], record[-_TAG_LEN:]
    if hashlib.sha256(body).digest() != tag:
        raise InstructionIncomplete("instruction record failed its integrity check")
    magic, count, k = _HEADER.unpack_from(body)
    if magic != _MAGIC or len(body) != _HEADER.size + count * _ENTRY.size:
        raise InstructionIncomplete("malformed instruction record")
    entries = []
    for i in range(count):
        sid, role, *flat, instr = _ENTRY.unpack_from(body, _HEADER.size + i * _ENTRY.size)
        u = (np.array(flat[0::2]) + 1j * np.array(flat[1::2])).reshape(2, 2)
        entries.append(InstructionEntry(sid, Role(role), u, instr))
    return entries, k


@dataclass(frozen=True)
class InstructionShare:
    rs_id: int
    payload: bytes
    block_size: int

    def blocks(self) -> list[bytes]:
        return [
            self.payload[i : i + self.block_size]
            for i in range(0, len(self.payload), self.block_size)
        ]


def _xor(a: bytes, b: bytes) -> bytes:
    return (np.frombuffer(a, np.uint8) ^ np.frombuffer(b, np.uint8)).tobytes()


def split_instructions(
    record: bytes, n_rs: int, rng: np.random.Generator, block_size: int = 64
) -> list[InstructionShare]:
    """n-of-n XOR sharing: every share is needed to recover ``record``."""
    if n_rs < 2:
        raise ValueError("instruction splitting needs at least two stations")
    shares = [rng.integers(0, 256, len(record), dtype=np.uint8).tobytes() for _ in range(n_rs - 1)]
    closing = record
    for s in shares:
        closing = _xor(closing, s)
    shares.append(closing)
    return [InstructionShare(i, s, block_size) for i, s in enumerate(shares)]


def combine_shares(shares: Sequence[InstructionShare]) -> bytes:
    if not shares:
        raise InstructionIncomplete("no instruction shares received")
    out = shares[0].payload
    for s in shares[1:]:
        if len(s.payload) != len(out):
            raise InstructionIncomplete("instruction shares differ in length")
        out = _xor(out, s.payload)
    return out


# --- footnote-style intertwining of QLV bases into the QDC stream -----------


def n_embedded(message_len: int, n_qlv: int, k: int) -> int:
    return min(n_qlv, -(-message_len // k)) if message_len else 0


def intertwine(message: Sequence[int], embedded: Sequence[int], k: int) -> list[int]:
    """Insert embedded bit j after message bit min((j+1) k, len(message))."""
    out: list[int] = []
    it = iter(embedded)
    pending = len(embedded)
    for i, b in enumerate(message, start=1):
        out.append(int(b))
        if pending and i % k == 0:
            out.append(int(next(it)))
            pending -= 1
    out.extend(int(b) for b in it)
    return out


def untwine(stream: Sequence[int], n_embed: int, k: int) -> tuple[list[int], list[int]]:
    message_len = len(stream) - n_embed
    message: list[int] = []
    embedded: list[int] = []
    taken = 0
    for b in stream:
        if len(message) == message_len or (
            len(embedded) < n_embed and taken == k
        ):
            embedded.append(int(b))
            taken = 0
        else:
            message.append(int(b))
            taken += 1
    return message, embedded


# --- sessions --------------------------------------------------------------


@dataclass(frozen=True)
class SessionConfig:
    n_qlv: int = 4
    n_decoy: int = 4
    control_fraction: float = 0.25
    intertwine_k: int = 16
    n_rs_shares: int | None = None
    block_size: int = 64
    method: Method = Method.REGION

    def __post_init__(self) -> None:
        if self.n_qlv < 1:
            raise ValueError("sessions need at least one QLV token")
        if self.intertwine_k < 1:
            raise ValueError("intertwine_k must be positive")


@dataclass(frozen=True)
class DeviceModel:
    """How the decrypting device behaves.

    ``displacement`` is where the device really is relative to the claim.
    ``relocate_count`` slots, picked without role knowledge, are moved to a
    second device at ``claim + remote_displacement``.  ``premeasure`` makes
    the device measure its memory before instructions arrive.
    """

    displacement: tuple[float, float] = (0.0, 0.0)
    relocate_count: int = 0
    remote_displacement: tuple[float, float] = (0.0, 0.0)
    premeasure: bool = False
    channel_attack: AttackModel = NO_ATTACK
    withheld_share: int | None = None
    processing_delay_s: float = 0.0

    @classmethod
    def honest(cls) -> "DeviceModel":
        return cls()

    @classmethod
    def relocated(cls, offset, direction=(1.0, 0.0)) -> "DeviceModel":
        u = np.asarray(direction, dtype=float)
        d = float(offset) * u / np.linalg.norm(u)
        return cls(displacement=(float(d[0]), float(d[1])))


@dataclass
class SessionResult:
    qlv_verdict: Verdict | None
    decrypted: list[int] | None
    refusal: Refusal | None
    transcript: QdcTranscript | None
    clock: float
    events: list[str] = field(default_factory=list)
    shares_released: int = 0
    qlv_outcomes: list[tuple[int, str, int, bool]] = field(default_factory=list)

    def __post_init__(self) -> None:
        if (self.decrypted is None) == (self.refusal is None):
            raise ValueError("exactly one of decrypted / refusal must be set")

    def result_line(self) -> str:
        verdict = "accept" if self.decrypted is not None else "reject"
        refusal = self.refusal.value if self.refusal else ""
        plain = bits_to_hex(self.decrypted) if self.decrypted is not None else ""
        return f"{verdict},{refusal},{plain},{self.clock:.9g}"


def bits_from_hex(text: str) -> list[int]:
    data = bytes.fromhex(text.strip())
    return [(byte >> (7 - i)) & 1 for byte in data for i in range(8)]


def bits_to_hex(bits: Sequence[int]) -> str:
    if len(bits) % 8:
        bits = list(bits) + [0] * (8 - len(bits) % 8)
    out = bytearray()
    for i in range(0, len(bits), 8):
        out.append(int("".join(str(int(b)) for b in bits[i : i + 8]), 2))
    return out.hex()


def _choose_without_roles(view: DecryptorView, count: int, rng: np.random.Generator) -> frozenset[int]:
    """Adversary slot selection; sees only the decryptor view."""
    ids = [s.slot_id for s in view.slots]
    count = min(max(count, 0), len(ids))
    return frozenset(int(i) for i in rng.choice(ids, size=count, replace=False))


def _aggregate(verdicts: list[Verdict]) -> Verdict:
    worst = max(verdicts, key=lambda v: v.mahalanobis)
    return Verdict(
        all(v.accepted for v in verdicts),
        worst.mahalanobis,
        worst.threshold,
        worst.estimate,
        worst.method,
        worst.reason,
    )


def run_session(
    scenario: Scenario,
    message: Sequence[int],
    device: DeviceModel,
    clock: float,
    rng: np.random.Generator,
    config: SessionConfig = SessionConfig(),
) -> SessionResult:
    """Provision, gate on time, release instructions, decode, verify, release.

    Each QLV token is verified on its own timings at per-token confidence
    ``p_c ** (1 / n_qlv)`` so an honest session passes with probability
    ``p_c``.
    """
    message = [int(b) for b in message]
    if any(b not in (0, 1) for b in message):
        raise ValueError("message must be a bit vector")
    if scenario.n_rs < MIN_STATIONS:
        raise ValueError(f"sessions need at least {MIN_STATIONS} reference stations")
    k = config.intertwine_k
    events: list[str] = []

    # server side preparation
    n_embed = n_embedded(len(message), config.n_qlv, k)
    bases = [int(b) for b in rng.integers(0, 2, config.n_qlv)]
    stream = intertwine(message, bases[:n_embed], k)
    schedule = draw_schedule(len(stream), config.control_fraction, rng)
    view, ledger = provision(len(schedule), len(schedule), config.n_qlv, config.n_decoy, rng)
    events.append(f"provisioned slots={len(view)}")

    memory = {sid: slot.state for sid, slot in ledger.slots.items()}
    moved = _choose_without_roles(view, device.relocate_count, rng)
    if device.premeasure:
        for sid in sorted(memory):
            _, memory[sid] = measure_qubit(memory[sid], 1, rng)
        events.append("device measured memory before instructions")

    if clock < scenario.t_d:
        events.append(f"time-locked: clock {clock:.9g} < t_d {scenario.t_d:.9g}")
        return SessionResult(None, None, Refusal.TIME_LOCKED, None, clock, events)

    entries = []
    for i, sid in enumerate(ledger.order[Role.QDC_MESSAGE_HALF]):
        entries.append(InstructionEntry(sid, Role.QDC_MESSAGE_HALF, ledger.slots[sid].obfuscation,
                                        CONTROL_ROUND if schedule[i] else DATA_ROUND))
    for sid in ledger.order[Role.QDC_TELEPORT_HALF]:
        entries.append(InstructionEntry(sid, Role.QDC_TELEPORT_HALF, ledger.slots[sid].obfuscation, NO_INSTRUCTION))
    for j, sid in enumerate(ledger.order[Role.QLV_TOKEN]):
        instr = BASIS_IN_STREAM if j < n_embed else bases[j]
        entries.append(InstructionEntry(sid, Role.QLV_TOKEN, ledger.slots[sid].obfuscation, instr))
    for sid in ledger.order[Role.DECOY]:
        entries.append(InstructionEntry(sid, Role.DECOY, ledger.slots[sid].obfuscation, NO_INSTRUCTION))
    record = encode_instructions(entries, k)
    n_rs_used = config.n_rs_shares or int(rng.integers(2, scenario.n_rs + 1))
    shares = split_instructions(record, n_rs_used, rng, config.block_size)
    for s in shares:
        events.append(f"share rs={s.rs_id} bytes={len(s.payload)}")
    received = [s for s in shares if s.rs_id != device.withheld_share]

    # decryptor side
    try:
        got, k_rx = decode_instructions(combine_shares(received))
    except InstructionIncomplete as exc:
        events.append(f"instruction reconstruction failed: {exc}")
        return SessionResult(None, None, Refusal.INSTRUCTION_INCOMPLETE, None, clock,
                             events, len(shares))

    by_role: dict[Role, list[InstructionEntry]] = {role: [] for role in Role}
    for e in got:
        by_role[e.role].append(e)

    def unscramble(e: InstructionEntry) -> PureState:
        return apply_gate(memory[e.slot_id], np.asarray(e.unitary).conj().T, 1)

    rx_schedule = [e.instruction == CONTROL_ROUND for e in by_role[Role.QDC_MESSAGE_HALF]]
    m_pairs = [unscramble(e) for e in by_role[Role.QDC_MESSAGE_HALF]]
    t_pairs = [unscramble(e) for e in by_role[Role.QDC_TELEPORT_HALF]]
    try:
        transcript = execute_rounds(m_pairs, t_pairs, stream, rx_schedule,
                                    device.channel_attack, rng)
    except TamperDetected as exc:
        events.append(f"qdc aborted: {exc}")
        return SessionResult(None, None, Refusal.TAMPER_DETECTED, exc.transcript, clock,
                             events, len(shares))
    rx_embed = sum(1 for e in by_role[Role.QLV_TOKEN] if e.instruction == BASIS_IN_STREAM)
    plaintext, stream_bases = untwine(transcript.decoded_bits, rx_embed, k_rx)
    events.append(f"qdc decoded bits={len(transcript.decoded_bits)} controls={len(transcript.control_results)}")

    # QLV challenges
    claim = scenario.claim
    token_p_c = scenario.p_c ** (1.0 / len(by_role[Role.QLV_TOKEN]))
    observations = []
    outcomes: list[tuple[int, str, int, bool]] = []
    embedded_iter = iter(stream_bases)
    for e in by_role[Role.QLV_TOKEN]:
        code = next(embedded_iter) if e.instruction == BASIS_IN_STREAM else e.instruction
        basis = "X" if code == BASIS_X else "Z"
        bit, state = measure_qubit(unscramble(e), 1, rng, basis)
        server_bit, _ = measure_qubit(state, 0, rng, basis)
        # |psi+>: anti-correlated in Z, correlated in X
        ok = (bit != server_bit) if basis == "Z" else (bit == server_bit)
        outcomes.append((e.slot_id, basis, bit, ok))
        offset = device.remote_displacement if e.slot_id in moved else device.displacement
        obs = sample_tdoa(claim + np.asarray(offset), scenario, rng,
                          delay_s=device.processing_delay_s)
        observations.append(obs)
    verdicts = verify_many(observations, scenario, config.method, p_c=token_p_c)
    verdict = _aggregate(verdicts)
    events.append(f"qlv tokens={len(verdicts)} accepted={verdict.accepted}")

    if not verdict.accepted:
        refusal = Refusal.QLV_FAILED
    elif transcript.control_failures or not all(o[3] for o in outcomes):
        refusal = Refusal.TAMPER_DETECTED
    else:
        events.append("plaintext released")
        return SessionResult(verdict, plaintext, None, transcript, clock, events,
                             len(shares), outcomes)
    return SessionResult(verdict, None, refusal, transcript, clock, events, len(shares), outcomes)


def relocation_attack(
    scenario: Scenario,
    message: Sequence[int],
    n_moved: int,
    displacement,
    rng: np.random.Generator,
    config: SessionConfig = SessionConfig(),
    clock: float | None = None,
) -> SessionResult:
    """Move ``n_moved`` role-blind slots to a second device at claim + ``displacement``."""
    d = np.asarray(displacement, dtype=float)
    device = DeviceModel(relocate_count=n_moved, remote_displacement=(float(d[0]), float(d[1])))
    return run_session(scenario, message, device,
                       scenario.t_d if clock is None else clock, rng, config)


def session_slot_count(message_len: int, config: SessionConfig, n_control: int = 0) -> int:
    rounds = message_len + n_embedded(message_len, config.n_qlv, config.intertwine_k) + n_control
    return 2 * rounds + config.n_qlv + config.n_decoy


def prob_no_token_moved(total: int, n_qlv: int, n_moved: int) -> float:
    """Hypergeometric probability that a uniform ``n_moved``-subset misses every token."""
    if n_moved > total - n_qlv:
        return 0.0
    return math.comb(total - n_qlv, n_moved) / math.comb(total, n_moved)
