"""States of a Be/Mg qubit pair sharing one truncated motional mode.

Index layout is fixed: amplitudes are stored flat in C order over the
shape ``(2, 2, n_max + 1)`` with axes ``(s_be, s_mg, n)``.  Qubit level 0 is
``|up>`` and level 1 is ``|down>``, so the flat index of ``(s_be, s_mg, n)``
is ``(2 * s_be + s_mg) * (n_max + 1) + n``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

UP = 0
DOWN = 1
SPECIES = ("Be", "Mg")
OUTCOMES = ("uu", "ud", "du", "dd")

NORM_TOL = 1e-9


class CutoffTooSmallError(ValueError):
    """Raised when the Fock truncation discards too much population."""


def species_index(species: str) -> int:
    try:
        return SPECIES.index(species)
    except ValueError:
        raise ValueError(f"unknown species {species!r}, expected one of {SPECIES}") from None


def _level(s) -> int:
    if s in (UP, "up", "u", "↑"):
        return UP
    if s in (DOWN, "down", "d", "↓"):
        return DOWN
    raise ValueError(f"unknown qubit level {s!r}")


@dataclass(frozen=True)
class RegisterShape:
    n_max: int

    def __post_init__(self):
        if int(self.n_max) != self.n_max or self.n_max < 1:
            raise ValueError(f"n_max must be an integer >= 1, got {self.n_max}")

    @property
    def n_fock(self) -> int:
        return self.n_max + 1

    @property
    def dim(self) -> int:
        return 4 * self.n_fock

    @property
    def tensor_shape(self) -> tuple[int, int, int]:
        return (2, 2, self.n_fock)

    def index(self, s_be, s_mg, n: int) -> int:
        if not 0 <= n <= self.n_max:
            raise IndexError(f"Fock index {n} outside 0..{self.n_max}")
        return (2 * _level(s_be) + _level(s_mg)) * self.n_fock + n

    @classmethod
    def for_nbar(cls, nbar: float) -> "RegisterShape":
        """Default cutoff ``10 * (nbar + 1)``."""
        return cls(max(1, math.ceil(10 * (nbar + 1))))


@dataclass(frozen=True)
class ThermalSpec:
    nbar: float
    tail_tol: float = 1e-4

    def __post_init__(self):
        if self.nbar < 0:
            raise ValueError("nbar must be non-negative")
        if not 0 < self.tail_tol < 1:
            raise ValueError("tail_tol must lie in (0, 1)")


@dataclass(frozen=True, eq=False)
class QuantumState:
    """Normalized pure state of the register.  Treat as immutable."""

    amplitudes: np.ndarray
    shape: RegisterShape
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        amps = np.asarray(self.amplitudes, dtype=complex).reshape(-1)
        if amps.size != self.shape.dim:
            raise ValueError(f"expected {self.shape.dim} amplitudes, got {amps.size}")
        if self.check:
            norm = np.vdot(amps, amps).real
            if abs(norm - 1.0) > NORM_TOL:
                raise ValueError(f"state not normalized (|psi|^2 = {norm!r})")
        amps.flags.writeable = False
        object.__setattr__(self, "amplitudes", amps)

    @property
    def tensor(self) -> np.ndarray:
        return self.amplitudes.reshape(self.shape.tensor_shape)

    @classmethod
    def from_tensor(cls, tensor: np.ndarray, shape: RegisterShape, normalize: bool = False):
        amps = np.asarray(tensor, dtype=complex).reshape(-1)
        if normalize:
            amps = amps / np.linalg.norm(amps)
        return cls(amps, shape)

    @classmethod
    def from_qubits(cls, qubit_vector, shape: RegisterShape, n: int = 0) -> "QuantumState":
        """Product of a 4-vector over (uu, ud, du, dd) with Fock state ``n``."""
        q = np.asarray(qubit_vector, dtype=complex).reshape(4)
        if not 0 <= n <= shape.n_max:
            raise IndexError(f"Fock index {n} outside 0..{shape.n_max}")
        t = np.zeros((4, shape.n_fock), dtype=complex)
        t[:, n] = q / np.linalg.norm(q)
        return cls(t.reshape(-1), shape)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def fock_populations(self) -> np.ndarray:
        return np.sum(np.abs(self.tensor) ** 2, axis=(0, 1))

    def mean_n(self) -> float:
        p = self.fock_populations()
        return float(np.dot(np.arange(p.size), p))


def thermal_weights(spec: ThermalSpec, shape: RegisterShape) -> list[tuple[int, float]]:
    """Thermal occupation probabilities ``nbar**n / (nbar + 1)**(n + 1)``.

    The retained weights are renormalized to one.  Raises
    :class:`CutoffTooSmallError` when the discarded tail is not below
    ``spec.tail_tol``.
    """
    nbar = spec.nbar
    if nbar == 0:
        return [(0, 1.0)]
    n = np.arange(shape.n_fock)
    ratio = nbar / (nbar + 1.0)
    w = ratio**n / (nbar + 1.0)
    tail = ratio**shape.n_fock  # exact mass of n > n_max
    if tail >= spec.tail_tol:
        raise CutoffTooSmallError(
            f"thermal tail {tail:.3g} beyond n_max={shape.n_max} exceeds tail_tol={spec.tail_tol:g}"
            f" for nbar={nbar:g}"
        )
    w = w / w.sum()
    return [(int(k), float(p)) for k, p in zip(n, w)]


def compose_state(s_be, s_mg, n: int, shape: RegisterShape) -> QuantumState:
    amps = np.zeros(shape.dim, dtype=complex)
    amps[shape.index(s_be, s_mg, n)] = 1.0
    return QuantumState(amps, shape)


def reduced_qubit_density(state: QuantumState) -> np.ndarray:
    """Trace out the motion; returns a 4x4 matrix over (uu, ud, du, dd)."""
    m = state.tensor.reshape(4, state.shape.n_fock)
    rho = m @ m.conj().T
    return 0.5 * (rho + rho.conj().T)


def qubit_populations(state: QuantumState) -> np.ndarray:
    """Probabilities of (uu, ud, du, dd) with the motion traced out."""
    p = np.sum(np.abs(state.tensor.reshape(4, -1)) ** 2, axis=1)
    total = p.sum()
    if abs(total - 1.0) > NORM_TOL:
        raise ValueError(f"state not normalized (sum of populations {total!r})")
    return p


def _sqrtm_psd(m: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh(0.5 * (m + m.conj().T))
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def fidelity(a, b) -> float:
    """Fidelity between two states of the same kind.

    Accepts :class:`QuantumState`, plain state vectors, or density matrices.
    Pure/pure gives ``|<a|b>|^2``; anything involving a density matrix uses
    the Uhlmann fidelity ``(tr sqrt(sqrt(r) s sqrt(r)))**2``.
    """
    va = a.amplitudes if isinstance(a, QuantumState) else np.asarray(a, dtype=complex)
    vb = b.amplitudes if isinstance(b, QuantumState) else np.asarray(b, dtype=complex)
    if isinstance(a, QuantumState) and isinstance(b, QuantumState) and a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")

    if va.ndim == 1 and vb.ndim == 1:
        if va.shape != vb.shape:
            raise ValueError(f"shape mismatch: {va.shape} vs {vb.shape}")
        f = abs(np.vdot(va, vb)) ** 2
    else:
        ra = np.outer(va, va.conj()) if va.ndim == 1 else va
        rb = np.outer(vb, vb.conj()) if vb.ndim == 1 else vb
        if ra.shape != rb.shape:
            raise ValueError(f"shape mismatch: {ra.shape} vs {rb.shape}")
        if va.ndim == 1 or vb.ndim == 1:
            psi, rho = (va, rb) if va.ndim == 1 else (vb, ra)
            f = np.vdot(psi, rho @ psi).real
        else:
            s = _sqrtm_psd(ra)
            f = np.trace(_sqrtm_psd(s @ rb @ s)).real ** 2
    return float(min(1.0, max(0.0, f)))


BELL_PHI_PLUS = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
