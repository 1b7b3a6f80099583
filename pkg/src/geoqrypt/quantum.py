"""Few-qubit statevector simulation and two-mode Gaussian covariance utilities.

Conventions
-----------
* Qubit 0 is the least-significant bit of the amplitude index.
* States are compared by fidelity; global phase is never significant.
* Quadratures use hbar = 2, so the vacuum covariance is the identity.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

NORM_TOL = 1e-12
UNITARY_TOL = 1e-12
BELL_TOL = 1e-9

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)

for _m in (I2, X, Y, Z, H):
    _m.setflags(write=False)


class QuantumError(ValueError):
    """Invalid quantum operation or malformed input."""


class MalformedCovariance(QuantumError):
    pass


class BellOutcome(enum.Enum):
    PHI_PLUS = "phi+"
    PHI_MINUS = "phi-"
    PSI_PLUS = "psi+"
    PSI_MINUS = "psi-"

    @property
    def pauli_bits(self) -> tuple[int, int]:
        """(x, z) such that this state is (I (x) X^x Z^z)|phi+> up to phase."""
        return _PAULI_BITS[self]


_PAULI_BITS = {
    BellOutcome.PHI_PLUS: (0, 0),
    BellOutcome.PHI_MINUS: (0, 1),
    BellOutcome.PSI_PLUS: (1, 0),
    BellOutcome.PSI_MINUS: (1, 1),
}

_S = 1 / math.sqrt(2)
# Indexed by (b_low + 2 * b_high); every Bell state is symmetric or
# antisymmetric under swap, so the pair order only affects a global sign.
_BELL_VECTORS = {
    BellOutcome.PHI_PLUS: np.array([_S, 0, 0, _S], dtype=complex),
    BellOutcome.PHI_MINUS: np.array([_S, 0, 0, -_S], dtype=complex),
    BellOutcome.PSI_PLUS: np.array([0, _S, _S, 0], dtype=complex),
    BellOutcome.PSI_MINUS: np.array([0, _S, -_S, 0], dtype=complex),
}
BELL_ORDER = (
    BellOutcome.PHI_PLUS,
    BellOutcome.PHI_MINUS,
    BellOutcome.PSI_PLUS,
    BellOutcome.PSI_MINUS,
)
BELL_MATRIX = np.stack([_BELL_VECTORS[k] for k in BELL_ORDER])


@dataclass(frozen=True, eq=False)
class PureState:
    n_qubits: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amps = np.array(self.amplitudes, dtype=complex).reshape(-1)
        if not 1 <= self.n_qubits <= 8:
            raise QuantumError(f"n_qubits must be in 1..8, got {self.n_qubits}")
        if amps.size != 2**self.n_qubits:
            raise QuantumError(
                f"expected {2**self.n_qubits} amplitudes, got {amps.size}"
            )
        norm = float(np.vdot(amps, amps).real)
        if abs(norm - 1.0) > NORM_TOL:
            raise QuantumError(f"state not normalized (norm^2 = {norm!r})")
        amps.setflags(write=False)
        object.__setattr__(self, "amplitudes", amps)

    @classmethod
    def from_amplitudes(cls, amplitudes, normalize: bool = False) -> "PureState":
        amps = np.asarray(amplitudes, dtype=complex).reshape(-1)
        n = int(round(math.log2(amps.size))) if amps.size else 0
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(n, amps)

    @classmethod
    def basis(cls, bits: str) -> "PureState":
        """Computational basis state; ``bits`` lists qubit 0 first."""
        index = sum(int(b) << q for q, b in enumerate(bits))
        amps = np.zeros(2 ** len(bits), dtype=complex)
        amps[index] = 1.0
        return cls(len(bits), amps)

    def tensor(self, other: "PureState") -> "PureState":
        """Joint state with ``self`` on the low qubits, ``other`` above it."""
        return PureState(
            self.n_qubits + other.n_qubits, np.kron(other.amplitudes, self.amplitudes)
        )

    def __repr__(self) -> str:
        return f"PureState(n_qubits={self.n_qubits}, amplitudes={self.amplitudes!r})"


def _tensor_view(state: PureState) -> np.ndarray:
    return state.amplitudes.reshape((2,) * state.n_qubits)


def _axis(n: int, q: int) -> int:
    return n - 1 - q


def _check_qubit(state: PureState, q: int) -> None:
    if not 0 <= q < state.n_qubits:
        raise IndexError(f"qubit {q} out of range for {state.n_qubits}-qubit state")


def check_unitary(u: np.ndarray, tol: float = UNITARY_TOL) -> np.ndarray:
    u = np.asarray(u, dtype=complex)
    if u.shape != (2, 2):
        raise QuantumError(f"expected a 2x2 matrix, got shape {u.shape}")
    if np.abs(u.conj().T @ u - I2).max() > tol:
        raise QuantumError("matrix is not unitary")
    return u


def make_bell_pair(kind: BellOutcome = BellOutcome.PSI_PLUS) -> PureState:
    return PureState(2, _BELL_VECTORS[kind])


def apply_gate(state: PureState, gate: np.ndarray, target: int) -> PureState:
    """Apply a single-qubit unitary to qubit ``target``."""
    _check_qubit(state, target)
    gate = check_unitary(gate)
    n = state.n_qubits
    psi = state.amplitudes.reshape(2 ** (n - 1 - target), 2, 2**target)
    return PureState(n, np.matmul(gate, psi).reshape(-1))


def fidelity(a: PureState, b: PureState) -> float:
    if a.n_qubits != b.n_qubits:
        raise QuantumError(f"dimension mismatch: {a.n_qubits} vs {b.n_qubits} qubits")
    f = abs(np.vdot(a.amplitudes, b.amplitudes)) ** 2
    return float(min(1.0, f))


def _pair_tensor(state: PureState, q1: int, q2: int) -> np.ndarray:
    """Amplitudes as (rest..., b_q2, b_q1), flattened pair index b_q1 + 2 b_q2."""
    n = state.n_qubits
    psi = np.moveaxis(_tensor_view(state), [_axis(n, q2), _axis(n, q1)], [-2, -1])
    return psi.reshape(psi.shape[:-2] + (4,))


def _check_pair(state: PureState, q1: int, q2: int) -> None:
    _check_qubit(state, q1)
    _check_qubit(state, q2)
    if q1 == q2:
        raise QuantumError("Bell measurement needs two distinct qubits")


def _bell_amplitudes(state: PureState, q1: int, q2: int) -> np.ndarray:
    """Projections onto each Bell state, shape (rest..., 4) in BELL_ORDER."""
    _check_pair(state, q1, q2)
    return _pair_tensor(state, q1, q2) @ BELL_MATRIX.conj().T


def bell_probabilities(state: PureState, q1: int, q2: int) -> dict[BellOutcome, float]:
    proj = _bell_amplitudes(state, q1, q2).reshape(-1, 4)
    probs = np.sum(np.abs(proj) ** 2, axis=0)
    return {kind: float(p) for kind, p in zip(BELL_ORDER, probs)}


def bell_measure(
    state: PureState, q1: int, q2: int, rng: np.random.Generator
) -> tuple[BellOutcome, PureState]:
    """Projective Bell-basis measurement on qubits ``q1`` and ``q2``."""
    proj = _bell_amplitudes(state, q1, q2)
    cum = np.cumsum(np.sum(np.abs(proj.reshape(-1, 4)) ** 2, axis=0))
    k = min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), 3)
    kind = BELL_ORDER[k]
    return kind, _collapse_pair(state, q1, q2, kind, proj[..., k])


def _collapse_pair(
    state: PureState, q1: int, q2: int, kind: BellOutcome, rest: np.ndarray
) -> PureState:
    n = state.n_qubits
    bell = _BELL_VECTORS[kind]
    rest = rest / np.linalg.norm(rest)
    psi = np.multiply.outer(rest, bell).reshape(rest.shape + (2, 2))
    psi = np.moveaxis(psi, [-2, -1], [_axis(n, q2), _axis(n, q1)])
    return PureState(n, psi.reshape(-1))


def measure_qubit(
    state: PureState, q: int, rng: np.random.Generator, basis: str = "Z"
) -> tuple[int, PureState]:
    """Single-qubit projective measurement in the Z or X basis.

    The returned state is collapsed onto the observed eigenvector (in the
    original frame, not rotated).
    """
    _check_qubit(state, q)
    if basis not in ("Z", "X"):
        raise QuantumError(f"unsupported basis {basis!r}")
    work = apply_gate(state, H, q) if basis == "X" else state
    n = work.n_qubits
    psi = np.moveaxis(_tensor_view(work), _axis(n, q), 0)
    p1 = float(np.vdot(psi[1], psi[1]).real)
    bit = int(rng.random() < p1)
    collapsed = np.zeros_like(psi)
    collapsed[bit] = psi[bit] / np.linalg.norm(psi[bit])
    out = PureState(n, np.moveaxis(collapsed, 0, _axis(n, q)).reshape(-1))
    if basis == "X":
        out = apply_gate(out, H, q)
    return bit, out


def discard_qubits(state: PureState, qubits: tuple[int, ...], known: PureState) -> PureState:
    """Remove ``qubits`` which are known to be in the product factor ``known``.

    ``known`` lists the removed qubits in the order given (first entry is its
    qubit 0).  Remaining qubits keep their relative order.
    """
    n = state.n_qubits
    for q in qubits:
        _check_qubit(state, q)
    k = len(qubits)
    if known.n_qubits != k:
        raise QuantumError("known factor has the wrong number of qubits")
    axes = [_axis(n, q) for q in reversed(qubits)]
    psi = np.moveaxis(_tensor_view(state), axes, list(range(n - k, n)))
    psi = psi.reshape((-1, 2**k)) @ known.amplitudes.conj()
    norm = np.linalg.norm(psi)
    if abs(norm - 1.0) > 1e-9:
        raise QuantumError("discarded qubits were not in the stated product factor")
    return PureState(n - k, psi / norm)


def identify_bell(state: PureState, tol: float = BELL_TOL) -> BellOutcome | None:
    """Which Bell state ``state`` is (up to phase), or None."""
    if state.n_qubits != 2:
        return None
    for kind in BELL_ORDER:
        if fidelity(state, make_bell_pair(kind)) >= 1.0 - tol:
            return kind
    return None


def pauli_from_bits(x: int, z: int) -> np.ndarray:
    return np.linalg.matrix_power(Z, z) @ np.linalg.matrix_power(X, x)


def teleport_qubit(
    state: PureState,
    source: int,
    sender_half: int,
    receiver_half: int,
    rng: np.random.Generator,
    resource: BellOutcome = BellOutcome.PHI_PLUS,
) -> tuple[tuple[int, int], PureState]:
    """Teleport qubit ``source`` onto ``receiver_half`` inside a joint state.

    ``(sender_half, receiver_half)`` must hold the Bell state ``resource``.
    Returns the classical correction bits ``(x, z)`` and the corrected state
    with ``source`` and ``sender_half`` removed.
    """
    outcome, collapsed = bell_measure(state, source, sender_half, rng)
    mx, mz = outcome.pauli_bits
    rx, rz = resource.pauli_bits
    bits = (mx ^ rx, mz ^ rz)
    corrected = apply_gate(collapsed, pauli_from_bits(*bits), receiver_half)
    known = make_bell_pair(outcome)
    remaining = discard_qubits(corrected, (source, sender_half), known)
    return bits, remaining


def teleport(
    payload: PureState, resource: PureState, rng: np.random.Generator
) -> tuple[tuple[int, int], PureState]:
    """Teleport a one-qubit payload through a two-qubit Bell resource.

    Resource qubit 0 is the sender's half, qubit 1 the receiver's.
    """
    if payload.n_qubits != 1:
        raise QuantumError("payload must be a single qubit")
    kind = identify_bell(resource)
    if kind is None:
        raise QuantumError("resource is not a maximally entangled Bell pair")
    joint = payload.tensor(resource)  # q0 payload, q1 sender half, q2 receiver half
    return teleport_qubit(joint, 0, 1, 2, rng, resource=kind)


def sample_haar_unitary(rng: np.random.Generator) -> np.ndarray:
    """Haar-random element of U(2) via QR of a complex Ginibre matrix."""
    return sample_haar_unitaries(rng, 1)[0]


def sample_haar_unitaries(rng: np.random.Generator, n: int) -> np.ndarray:
    """``n`` independent Haar unitaries, shape (n, 2, 2)."""
    g = rng.standard_normal((n, 2, 2, 2)) @ np.array([1.0, 1j])
    q, r = np.linalg.qr(g / math.sqrt(2))
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[:, None, :]


# --- Gaussian states -------------------------------------------------------


def symplectic_form(n_modes: int) -> np.ndarray:
    return np.kron(np.eye(n_modes), np.array([[0.0, 1.0], [-1.0, 0.0]]))


@dataclass(frozen=True, eq=False)
class GaussianState:
    """First moments and covariance matrix of a 1- or 2-mode Gaussian state.

    Ordering is (q1, p1, q2, p2).  ``params`` carries construction parameters
    (e.g. squeezing r, variance v, lambda = tanh r) for reference only.
    """

    n_modes: int
    first_moments: np.ndarray
    cov: np.ndarray
    params: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.n_modes not in (1, 2):
            raise QuantumError("only 1 or 2 modes are supported")
        dim = 2 * self.n_modes
        mu = np.array(self.first_moments, dtype=float).reshape(-1)
        cov = np.array(self.cov, dtype=float)
        if mu.shape != (dim,) or cov.shape != (dim, dim):
            raise QuantumError("moment/covariance shapes do not match n_modes")
        if np.max(np.abs(cov - cov.T)) > 1e-12:
            raise MalformedCovariance("covariance is not symmetric")
        if not is_physical(cov):
            raise MalformedCovariance("covariance violates cov + i*Omega >= 0")
        mu.setflags(write=False)
        cov.setflags(write=False)
        object.__setattr__(self, "first_moments", mu)
        object.__setattr__(self, "cov", cov)
        object.__setattr__(self, "params", dict(self.params))


def is_physical(cov: np.ndarray, tol: float = 1e-9) -> bool:
    n = cov.shape[0] // 2
    eig = np.linalg.eigvalsh(cov + 1j * symplectic_form(n))
    return bool(eig.min() >= -tol)


def coherent_state_moments(alpha: complex) -> GaussianState:
    alpha = complex(alpha)
    return GaussianState(1, np.array([2 * alpha.real, 2 * alpha.imag]), np.eye(2))


def tmsv_covariance(r: float) -> GaussianState:
    """Two-mode squeezed vacuum with squeezing parameter ``r``."""
    if r < 0:
        raise QuantumError("squeezing parameter must be non-negative")
    v = math.cosh(2 * r)
    s = math.sinh(2 * r)
    zmat = np.diag([1.0, -1.0])
    cov = np.block([[v * np.eye(2), s * zmat], [s * zmat, v * np.eye(2)]])
    return GaussianState(2, np.zeros(4), cov, {"r": r, "v": v, "lambda": math.tanh(r)})


def _block_form(cov: np.ndarray, tol: float) -> tuple[float, float, np.ndarray]:
    a, c, b = cov[:2, :2], cov[:2, 2:], cov[2:, 2:]
    scale = max(1.0, float(np.max(np.abs(cov))))
    for name, blk in (("A", a), ("B", b)):
        if abs(blk[0, 1]) > tol * scale or abs(blk[0, 0] - blk[1, 1]) > tol * scale:
            raise MalformedCovariance(f"block {name} is not a multiple of the identity")
    if abs(c[0, 1]) > tol * scale or abs(c[1, 0]) > tol * scale:
        raise MalformedCovariance("block C is not diagonal")
    return float(a[0, 0]), float(b[0, 0]), c


def symplectic_spectrum_pt(g: GaussianState, tol: float = 1e-12) -> tuple[float, float]:
    """(nu_plus, nu_minus) of the partially transposed two-mode covariance.

    Requires the standard form A = a I, B = b I, C = diag(c+, c-).
    nu_minus < 1 witnesses entanglement.
    """
    if g.n_modes != 2:
        raise QuantumError("partial-transpose spectrum needs two modes")
    a, b, c = _block_form(g.cov, tol)
    p, q = float(c[0, 0]), float(c[1, 1])
    delta = a * a + b * b - 2.0 * p * q
    det_m = (a * b - p * p) * (a * b - q * q)
    # delta^2 - 4 det M, expanded so that nothing cancels when a = b
    disc = (a * a - b * b) ** 2 + 4.0 * (a * p - b * q) * (b * p - a * q)
    if disc < -1e-9 * max(1.0, delta * delta):
        raise MalformedCovariance(f"negative discriminant {disc!r}")
    root = math.sqrt(max(disc, 0.0))
    nu_plus_sq = (delta + root) / 2.0
    if nu_plus_sq <= 0 or det_m <= 0:
        raise MalformedCovariance("non-positive symplectic eigenvalue")
    # (delta - root)/2 rewritten via nu+^2 nu-^2 = det M to avoid cancellation
    nu_minus_sq = det_m / nu_plus_sq
    return math.sqrt(nu_plus_sq), math.sqrt(nu_minus_sq)
