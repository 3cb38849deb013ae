"""Per-shot stochastic noise: scattering, heating jumps, dephasing, SPAM flips.

Noise is unravelled into trajectories.  Every shot draws one
:class:`ShotNoise` from its own random stream; the executor then applies the
events while it steps through the pulse program.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import PAULI, apply_qubit_op
from .fockspace import CutoffTooSmallError, QuantumState, DOWN, UP, species_index

SCATTER_CHANNELS = ("depolarize", "raman", "rayleigh")
DEPHASING_LAWS = ("exponential", "gaussian")


@dataclass(frozen=True)
class NoiseBudget:
    """Error budget.  Scattering and heating entries are Bell-state
    infidelities per MS loop; the executor converts them to event rates."""

    p_scatter_mg: float = 6e-3
    p_scatter_be: float = 1e-3
    p_heating: float = 4e-3
    spam_error: float = 5e-3
    t2_be: float = 1.5
    t2_mg: float = 6e-3
    path_drift_sigma: float = 1.0
    scatter_channel: str = "depolarize"
    dephasing_law: str = "exponential"
    heating_down_fraction: float = 0.0

    def __post_init__(self):
        for name in ("p_scatter_mg", "p_scatter_be", "p_heating", "spam_error", "heating_down_fraction"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.t2_be <= 0 or self.t2_mg <= 0:
            raise ValueError("coherence times must be positive")
        if self.path_drift_sigma < 0:
            raise ValueError("path_drift_sigma must be non-negative")
        if self.scatter_channel not in SCATTER_CHANNELS:
            raise ValueError(f"scatter_channel must be one of {SCATTER_CHANNELS}")
        if self.dephasing_law not in DEPHASING_LAWS:
            raise ValueError(f"dephasing_law must be one of {DEPHASING_LAWS}")

    @classmethod
    def noiseless(cls) -> "NoiseBudget":
        return cls(0.0, 0.0, 0.0, 0.0, math.inf, math.inf, 0.0)

    @property
    def p_scatter(self) -> tuple[float, float]:
        return (self.p_scatter_be, self.p_scatter_mg)

    @property
    def t2(self) -> tuple[float, float]:
        return (self.t2_be, self.t2_mg)

    def dephasing_enabled(self, j: int) -> bool:
        return math.isfinite(self.t2[j])


@dataclass(frozen=True)
class NoiseRates:
    """Event rates (1/s) while the relevant beams are on."""

    scatter: tuple[float, float] = (0.0, 0.0)
    heating_up: float = 0.0
    heating_down: float = 0.0


@dataclass(frozen=True)
class ScatterEvent:
    time: float
    species: int
    channel: str
    draw: float  # uniform number selecting the channel branch


@dataclass(frozen=True)
class HeatingJump:
    time: float
    direction: int


@dataclass(frozen=True)
class ShotNoise:
    path_phase_offsets: tuple[float, float] = (0.0, 0.0)
    scattering: tuple[ScatterEvent, ...] = ()
    heating: tuple[HeatingJump, ...] = ()
    detunings: tuple[float, float] = (0.0, 0.0)
    prep_flips: tuple[bool, bool] = (False, False)
    detect_flips: tuple[bool, bool] = (False, False)

    @property
    def empty(self) -> bool:
        return (
            not any(self.path_phase_offsets)
            and not self.scattering
            and not self.heating
            and not any(self.detunings)
            and not any(self.prep_flips)
            and not any(self.detect_flips)
        )


def draw_detuning(t2: float, law: str, rng: np.random.Generator) -> float:
    """Static qubit detuning whose ensemble Ramsey contrast decays with ``t2``.

    exponential: Lorentzian detuning, <cos(D t)> = exp(-t/t2).
    gaussian: normal detuning, <cos(D t)> = exp(-(t/t2)**2).
    """
    if not math.isfinite(t2):
        return 0.0
    if law == "exponential":
        return float(rng.standard_cauchy() / t2)
    if law == "gaussian":
        return float(rng.normal(0.0, math.sqrt(2.0) / t2))
    raise ValueError(f"unknown dephasing law {law!r}")


def _events_in_windows(rate: float, windows, rng) -> list[float]:
    times = []
    for t0, t1 in windows:
        if rate <= 0 or t1 <= t0:
            continue
        k = rng.poisson(rate * (t1 - t0))
        times.extend(rng.uniform(t0, t1, size=k).tolist())
    return sorted(times)


def sample_shot(
    budget: NoiseBudget,
    sequence_duration: float,
    rng: np.random.Generator,
    rates: NoiseRates | None = None,
    laser_windows=None,
) -> ShotNoise:
    """Draw one shot's noise realization.

    ``rates`` gives event rates; without it only dephasing, path drift and
    SPAM flips are drawn.  Scattering is confined to ``laser_windows``
    (default: the whole sequence); heating acts over the whole sequence.
    The draw order is fixed so results depend only on the stream.
    """
    if sequence_duration <= 0:
        raise ValueError("sequence_duration must be positive")
    rates = rates or NoiseRates()
    windows = laser_windows if laser_windows is not None else [(0.0, sequence_duration)]

    sigma = budget.path_drift_sigma
    offsets = tuple(float(rng.normal(0.0, sigma)) if sigma > 0 else 0.0 for _ in range(2))

    scatter = []
    for j in (0, 1):
        for t in _events_in_windows(rates.scatter[j], windows, rng):
            scatter.append(ScatterEvent(t, j, budget.scatter_channel, float(rng.random())))
    scatter.sort(key=lambda e: (e.time, e.species))

    jumps = [HeatingJump(t, +1) for t in _events_in_windows(rates.heating_up, [(0.0, sequence_duration)], rng)]
    jumps += [HeatingJump(t, -1) for t in _events_in_windows(rates.heating_down, [(0.0, sequence_duration)], rng)]
    jumps.sort(key=lambda e: e.time)

    detunings = tuple(draw_detuning(budget.t2[j], budget.dephasing_law, rng) for j in (0, 1))

    # SPAM budget split evenly over (prep, detect) x (Be, Mg)
    p_flip = budget.spam_error / 4.0
    prep = tuple(bool(rng.random() < p_flip) for _ in range(2)) if p_flip > 0 else (False, False)
    detect = tuple(bool(rng.random() < p_flip) for _ in range(2)) if p_flip > 0 else (False, False)

    return ShotNoise(offsets, tuple(scatter), tuple(jumps), detunings, prep, detect)


# ---------------------------------------------------------------------------
# channels in trajectory form


def _species(j) -> int:
    return species_index(j) if isinstance(j, str) else int(j)


def apply_scattering(state: QuantumState, species, channel: str = "depolarize",
                     rng: np.random.Generator | None = None, draw: float | None = None,
                     branch: str | None = None) -> QuantumState:
    """Apply one photon-scattering event to a qubit.

    depolarize: one of I, X, Y, Z with equal probability (full depolarization
    on average).  raman: the qubit is measured and re-emitted into a random
    level.  rayleigh: Z with probability 1/2.  ``branch`` forces a Pauli for
    the depolarizing channel.
    """
    j = _species(species)
    if draw is None:
        draw = (rng or np.random.default_rng()).random()
    t = state.tensor
    if channel == "depolarize":
        name = branch or "IXYZ"[min(3, int(draw * 4))]
        return QuantumState.from_tensor(apply_qubit_op(t, PAULI[name], j), state.shape)
    if channel == "rayleigh":
        op = PAULI["Z"] if (branch == "Z" or (branch is None and draw >= 0.5)) else PAULI["I"]
        return QuantumState.from_tensor(apply_qubit_op(t, op, j), state.shape)
    if channel == "raman":
        # measure the qubit, then re-populate a random level
        p_up = float(np.sum(np.abs(np.take(t, UP, axis=j)) ** 2))
        u = draw * 2.0
        measured = UP if (u % 1.0) < p_up else DOWN
        new_level = UP if u < 1.0 else DOWN
        proj = np.zeros((2, 2), dtype=complex)
        proj[new_level, measured] = 1.0
        out = apply_qubit_op(t, proj, j)
        return QuantumState.from_tensor(out, state.shape, normalize=True)
    raise ValueError(f"unknown scattering channel {channel!r}")


def apply_heating_jump(state: QuantumState, direction: int,
                       strict: bool = True) -> tuple[QuantumState, bool]:
    """Apply normalized a^+ (direction +1) or a (direction -1) to the motion.

    Returns ``(new_state, flagged)`` where ``flagged`` marks an annihilation
    on the vacuum, which leaves the state unchanged.  With ``strict=False``
    population pushed past ``n_max`` is dropped instead of raising.
    """
    t = state.tensor
    n = state.shape.n_fock
    out = np.zeros_like(t)
    if direction == 1:
        top = float(np.sum(np.abs(t[:, :, -1]) ** 2))
        if strict and top > 1e-8:
            raise CutoffTooSmallError(f"heating jump pushes population {top:.3g} beyond n_max={n - 1}")
        out[:, :, 1:] = t[:, :, :-1] * np.sqrt(np.arange(1, n))
    elif direction == -1:
        out[:, :, :-1] = t[:, :, 1:] * np.sqrt(np.arange(1, n))
    else:
        raise ValueError("direction must be +1 or -1")
    norm = np.linalg.norm(out)
    if norm < 1e-12:
        return state, True
    return QuantumState.from_tensor(out / norm, state.shape), False


def z_phase(phase: float) -> np.ndarray:
    """Free evolution under a detuning: phase ``phase`` on |up> relative to |down>."""
    return np.diag([np.exp(-0.5j * phase), np.exp(0.5j * phase)])


def dephase_qubit(state: QuantumState, species, duration: float, t2: float,
                  rng: np.random.Generator, law: str = "exponential",
                  detuning: float | None = None) -> QuantumState:
    """Free precession for ``duration`` under a random static detuning."""
    if duration == 0:
        return state
    if t2 <= 0:
        raise ValueError("t2 must be positive")
    j = _species(species)
    d = draw_detuning(t2, law, rng) if detuning is None else detuning
    return QuantumState.from_tensor(apply_qubit_op(state.tensor, z_phase(d * duration), j), state.shape)
