"""Ping-pong quantum direct communication over a teleported travel qubit.

Every Bell pair is stored with the sender's half on qubit 0 and the
receiver's half on qubit 1.  A data round encodes one bit on the sender half
(I for 0, sigma_z for 1), teleports that travel qubit to the receiver through
a second pair, and decodes with a Bell measurement.  A control round skips
the encoding and compares computational-basis outcomes of the two halves.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .quantum import (
    BELL_MATRIX,
    BELL_ORDER,
    H,
    BellOutcome,
    PureState,
    QuantumError,
    X,
    Z,
    apply_gate,
    bell_measure,
    fidelity,
    make_bell_pair,
    measure_qubit,
    teleport_qubit,
)

_BELL_CONJ = BELL_MATRIX.conj()
_PSI_PLUS_BITS = BellOutcome.PSI_PLUS.pauli_bits

PAIR_TOL = 1e-9


class TamperDetected(Exception):
    """Decoding produced a result impossible under honest execution."""

    def __init__(self, message: str, transcript: "QdcTranscript | None" = None):
        super().__init__(message)
        self.transcript = transcript


class ResourceExhausted(Exception):
    pass


class AttackKind(enum.Enum):
    NONE = "none"
    INTERCEPT_RESEND = "intercept-resend"


@dataclass(frozen=True)
class AttackModel:
    """Adversary acting on travel qubits in transit.

    ``INTERCEPT_RESEND`` captures the travel qubit, measures it in ``basis``
    and forwards a substitute prepared in a uniformly random eigenstate of
    that basis.
    """

    kind: AttackKind = AttackKind.NONE
    basis: str = "Z"

    @classmethod
    def intercept_resend(cls, basis: str = "Z") -> "AttackModel":
        if basis not in ("Z", "X"):
            raise ValueError(f"unsupported basis {basis!r}")
        return cls(AttackKind.INTERCEPT_RESEND, basis)


NO_ATTACK = AttackModel()


def _is_psi_plus(pair: PureState) -> bool:
    psi_plus = make_bell_pair(BellOutcome.PSI_PLUS)
    return pair.n_qubits == 2 and fidelity(pair, psi_plus) >= 1 - PAIR_TOL


@dataclass
class QdcResources:
    message_pairs: list[PureState]
    teleport_pairs: list[PureState]
    control_fraction: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.control_fraction < 1.0:
            raise ValueError("control_fraction must lie in [0, 1)")
        if len(self.teleport_pairs) < len(self.message_pairs):
            raise ValueError("need at least as many teleport pairs as message pairs")
        for pair in (*self.message_pairs, *self.teleport_pairs):
            if not _is_psi_plus(pair):
                raise ValueError("every provisioned pair must be |psi+>")

    @classmethod
    def provision(cls, n_pairs: int, control_fraction: float = 0.0) -> "QdcResources":
        pair = make_bell_pair(BellOutcome.PSI_PLUS)
        return cls([pair] * n_pairs, [pair] * n_pairs, control_fraction)


@dataclass
class QdcTranscript:
    sent_bits: list[int] = field(default_factory=list)
    decoded_bits: list[int] = field(default_factory=list)
    teleport_corrections: list[tuple[int, int]] = field(default_factory=list)
    control_results: list[bool] = field(default_factory=list)
    rounds: list[str] = field(default_factory=list)
    aborted: bool = False

    @property
    def control_failures(self) -> int:
        return sum(1 for ok in self.control_results if not ok)

    @property
    def attack_detected(self) -> bool:
        return self.aborted or self.control_failures > 0


def encode_bit(bit: int, pair: PureState) -> PureState:
    """I for 0, sigma_z for 1 on the sender half of a |psi+> pair."""
    if bit not in (0, 1):
        raise ValueError(f"bit must be 0 or 1, got {bit!r}")
    if not _is_psi_plus(pair):
        raise QuantumError("encoding requires a |psi+> pair")
    return apply_gate(pair, Z, 0) if bit else pair


def decode_bit(joint_state: PureState, rng: np.random.Generator) -> int:
    outcome, _ = bell_measure(joint_state, 0, 1, rng)
    if outcome is BellOutcome.PSI_PLUS:
        return 0
    if outcome is BellOutcome.PSI_MINUS:
        return 1
    raise TamperDetected(f"Bell outcome {outcome.value} outside the legal code space")


def _in_transit(
    joint: PureState, travel: int, attack: AttackModel, rng: np.random.Generator
) -> PureState:
    if attack.kind is AttackKind.NONE:
        return joint
    seen, joint = measure_qubit(joint, travel, rng, attack.basis)
    fresh = int(rng.integers(2))
    if fresh != seen:
        # X flips Z eigenstates, Z flips X eigenstates
        joint = apply_gate(joint, X if attack.basis == "Z" else Z, travel)
    return joint


def run_round(
    message_pair: PureState,
    teleport_pair: PureState,
    bit: int | None,
    attack: AttackModel,
    rng: np.random.Generator,
) -> tuple[tuple[int, int], int | bool]:
    """One ping-pong round; ``bit=None`` runs a control round.

    Returns the teleport correction bits and either the decoded bit or the
    control-round pass flag.  Raises TamperDetected on an illegal outcome.
    """
    # q0 travel (sender half), q1 home, q2 teleport sender half, q3 teleport receiver half
    joint = message_pair.tensor(teleport_pair)
    if bit:
        joint = apply_gate(joint, Z, 0)
    joint = _in_transit(joint, 0, attack, rng)
    corrections, arrived = teleport_qubit(
        joint, 0, 2, 3, rng, resource=BellOutcome.PSI_PLUS
    )
    # arrived: q0 home, q1 travel
    if bit is None:
        home, arrived = measure_qubit(arrived, 0, rng)
        travel, _ = measure_qubit(arrived, 1, rng)
        return corrections, home != travel
    return corrections, decode_bit(arrived, rng)


def _measure_axis(
    a: np.ndarray, axis: int, rng: np.random.Generator
) -> tuple[int, np.ndarray]:
    one = np.take(a, 1, axis=axis)
    bit = int(rng.random() < float(np.vdot(one, one).real))
    keep = np.zeros(2)
    keep[bit] = 1.0
    shape = [1] * a.ndim
    shape[axis] = 2
    a = a * keep.reshape(shape)
    return bit, a / np.linalg.norm(a)


def _sample_bell(proj: np.ndarray, rng: np.random.Generator) -> int:
    cum = np.cumsum(np.sum(np.abs(proj.reshape(-1, 4)) ** 2, axis=0))
    return min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), 3)


def _fast_round(
    message_pair: PureState,
    teleport_pair: PureState,
    bit: int | None,
    attack: AttackModel,
    rng: np.random.Generator,
) -> tuple[tuple[int, int], int | bool]:
    """Same physics and rng consumption as :func:`run_round` on raw arrays."""
    # axes (q3, q2, q1, q0)
    a = np.kron(teleport_pair.amplitudes, message_pair.amplitudes).reshape(2, 2, 2, 2)
    if bit:
        a = a * np.array([1.0, -1.0])
    if attack.kind is not AttackKind.NONE:
        if attack.basis == "X":
            a = a @ H.T
        seen, a = _measure_axis(a, 3, rng)
        if attack.basis == "X":
            a = a @ H.T
        if int(rng.integers(2)) != seen:
            a = a[..., ::-1] if attack.basis == "Z" else a * np.array([1.0, -1.0])
    # Bell measurement on (q0, q2); rows (q3, q1), columns b_q0 + 2 b_q2
    proj = a.transpose(0, 2, 1, 3).reshape(4, 4) @ _BELL_CONJ.T
    k = _sample_bell(proj, rng)
    mx, mz = BELL_ORDER[k].pauli_bits
    corrections = (mx ^ _PSI_PLUS_BITS[0], mz ^ _PSI_PLUS_BITS[1])
    rest = proj[:, k].reshape(2, 2)  # axes (travel, home)
    rest = rest / np.linalg.norm(rest)
    if corrections[0]:
        rest = rest[::-1]
    if corrections[1]:
        rest = rest * np.array([[1.0], [-1.0]])
    if bit is None:
        home, rest = _measure_axis(rest, 1, rng)
        travel, _ = _measure_axis(rest, 0, rng)
        return corrections, home != travel
    outcome = BELL_ORDER[_sample_bell(rest.reshape(-1) @ _BELL_CONJ.T, rng)]
    if outcome is BellOutcome.PSI_PLUS:
        return corrections, 0
    if outcome is BellOutcome.PSI_MINUS:
        return corrections, 1
    raise TamperDetected(f"Bell outcome {outcome.value} outside the legal code space")


def draw_schedule(
    n_bits: int, control_fraction: float, rng: np.random.Generator
) -> list[bool]:
    """Round types (True = control) carrying ``n_bits`` data rounds."""
    schedule: list[bool] = []
    for _ in range(n_bits):
        while control_fraction > 0 and rng.random() < control_fraction:
            schedule.append(True)
        schedule.append(False)
    return schedule


def execute_rounds(
    message_pairs: Sequence[PureState],
    teleport_pairs: Sequence[PureState],
    bits: Sequence[int],
    schedule: Sequence[bool],
    attack: AttackModel,
    rng: np.random.Generator,
) -> QdcTranscript:
    """Run ``schedule`` over the given pairs without checking their state.

    Pairs are whatever the memory holds, so tampered pairs produce tampered
    statistics.  Raises TamperDetected carrying the partial transcript.
    """
    if sum(1 for s in schedule if not s) != len(bits):
        raise ValueError("schedule data rounds do not match the message length")
    transcript = QdcTranscript()
    data = iter(bits)
    for i, is_control in enumerate(schedule):
        if i >= len(message_pairs) or i >= len(teleport_pairs):
            raise ResourceExhausted(f"out of Bell pairs after {i} rounds")
        bit = None if is_control else next(data)
        transcript.rounds.append("control" if is_control else "data")
        if bit is not None:
            transcript.sent_bits.append(bit)
        try:
            corrections, result = _fast_round(
                message_pairs[i], teleport_pairs[i], bit, attack, rng
            )
        except TamperDetected as exc:
            transcript.aborted = True
            raise TamperDetected(str(exc), transcript) from None
        transcript.teleport_corrections.append(corrections)
        if is_control:
            transcript.control_results.append(bool(result))
        else:
            transcript.decoded_bits.append(int(result))
    return transcript


def pingpong_send(
    message: Sequence[int],
    resources: QdcResources,
    attack: AttackModel,
    rng: np.random.Generator,
    schedule: Sequence[bool] | None = None,
) -> QdcTranscript:
    """Send ``message`` bit by bit, interleaving control rounds.

    If ``schedule`` is omitted each round is a control round with probability
    ``resources.control_fraction``.  Every round consumes one message pair and
    one teleport pair.
    """
    bits = [int(b) for b in message]
    if any(b not in (0, 1) for b in bits):
        raise ValueError("message must be a bit vector")
    if schedule is None:
        schedule = draw_schedule(len(bits), resources.control_fraction, rng)
    return execute_rounds(
        resources.message_pairs, resources.teleport_pairs, bits, schedule, attack, rng
    )
