"""Projective measurement, photon-count detection and the estimators built on
shot records: parity scans, Bell-state fidelity and the CHSH sum.

The bright (fluorescing) state is |up> for both species.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import poisson

from .dynamics import wrap_phase
from .fockspace import OUTCOMES, QuantumState, qubit_populations

TSIRELSON = 2.0 * math.sqrt(2.0)


class DataInconsistencyError(ValueError):
    pass


@dataclass(frozen=True)
class SpeciesDetector:
    bright_mean: float = 30.0
    dark_mean: float = 3.5
    detect_duration: float = 330e-6
    threshold: int | None = None

    def __post_init__(self):
        if not self.bright_mean > self.dark_mean >= 0:
            raise ValueError("need bright_mean > dark_mean >= 0")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be >= 0")

    @property
    def cut(self) -> int:
        return optimal_threshold(self) if self.threshold is None else self.threshold


@dataclass(frozen=True)
class DetectorModel:
    """Sequential, independent fluorescence detection of (Be, Mg)."""

    be: SpeciesDetector = SpeciesDetector(detect_duration=330e-6)
    mg: SpeciesDetector = SpeciesDetector(detect_duration=200e-6)
    crosstalk: float = 0.0  # reserved

    def __post_init__(self):
        if self.crosstalk != 0.0:
            raise NotImplementedError("detector crosstalk is not modelled")

    def __getitem__(self, j: int) -> SpeciesDetector:
        return (self.be, self.mg)[j]

    @classmethod
    def ideal(cls) -> "DetectorModel":
        return cls(SpeciesDetector(30.0, 0.0, 330e-6), SpeciesDetector(30.0, 0.0, 200e-6))


@dataclass
class ShotRecord:
    outcome: int  # classified joint outcome, index into OUTCOMES
    true_outcome: int
    counts: tuple[int, int]
    settings: dict = field(default_factory=dict)
    flags: dict = field(default_factory=dict)

    @property
    def label(self) -> str:
        return OUTCOMES[self.outcome]

    def __post_init__(self):
        if min(self.counts) < 0:
            raise ValueError("photon counts must be non-negative")


def project_spins(state: QuantumState, rng: np.random.Generator) -> tuple[int, QuantumState]:
    """Born-rule measurement of both qubits.  Returns (outcome, collapsed state)."""
    p = qubit_populations(state)
    k = int(rng.choice(4, p=p / p.sum()))
    t = np.zeros_like(state.tensor)
    t[k // 2, k % 2] = state.tensor[k // 2, k % 2]
    return k, QuantumState.from_tensor(t, state.shape, normalize=True)


def photon_counts(outcome: int, detector: DetectorModel, rng: np.random.Generator) -> tuple[int, int]:
    """Poisson counts per species for a joint outcome (level 0 is bright)."""
    levels = (outcome // 2, outcome % 2)
    out = []
    for j, s in enumerate(levels):
        det = detector[j]
        mean = det.bright_mean if s == 0 else det.dark_mean
        out.append(int(rng.poisson(mean)) if mean > 0 else 0)
    return tuple(out)


def classification_error(det: SpeciesDetector, threshold: int) -> tuple[float, float]:
    """(P(N <= t | bright), P(N > t | dark))."""
    return float(poisson.cdf(threshold, det.bright_mean)), float(poisson.sf(threshold, det.dark_mean))


def optimal_threshold(det: SpeciesDetector) -> int:
    """Integer t minimizing P(N <= t | bright) + P(N > t | dark).

    Counts above ``t`` are classified bright.  Ties go to the smallest t.
    """
    hi = int(math.ceil(det.bright_mean + 10 * math.sqrt(det.bright_mean) + 10))
    ts = np.arange(hi + 1)
    err = poisson.cdf(ts, det.bright_mean) + poisson.sf(ts, det.dark_mean)
    return int(ts[np.argmin(err)])


def classify(counts: tuple[int, int], detector: DetectorModel) -> int:
    levels = [0 if c > detector[j].cut else 1 for j, c in enumerate(counts)]
    return 2 * levels[0] + levels[1]


def detect(outcome: int, detector: DetectorModel, rng: np.random.Generator,
           flips: tuple[bool, bool] = (False, False)) -> tuple[int, tuple[int, int]]:
    """Photon counts and thresholded outcome, with extra readout flips."""
    counts = photon_counts(outcome, detector, rng)
    k = classify(counts, detector)
    s = [k // 2, k % 2]
    for j in (0, 1):
        if flips[j]:
            s[j] ^= 1
    return 2 * s[0] + s[1], counts


# ---------------------------------------------------------------------------
# estimators


def populations(records) -> np.ndarray:
    counts = np.bincount([r.outcome for r in records], minlength=4)
    return counts / max(1, counts.sum())


def parity_of(pops) -> float:
    return float(pops[0] + pops[3] - pops[1] - pops[2])


def parity_from_records(records) -> tuple[float, float]:
    """Parity and its binomial standard error."""
    same = np.array([r.outcome in (0, 3) for r in records], dtype=float)
    n = same.size
    p = same.mean()
    # add-half estimate keeps the error finite when every shot agrees
    q = (same.sum() + 0.5) / (n + 1)
    return float(2 * p - 1), float(2 * math.sqrt(q * (1 - q) / n))


@dataclass(frozen=True)
class SinusoidFit:
    amplitude: float
    phase: float
    offset: float
    residual: float
    amplitude_stderr: float
    flat: bool = False


def fit_sinusoid(phi, values, k: int = 2, stderr=None) -> SinusoidFit:
    """Least-squares fit of ``A cos(k phi + phase) + offset`` with A >= 0."""
    phi = np.asarray(phi, dtype=float)
    y = np.asarray(values, dtype=float)
    if phi.size < 4:
        raise ValueError("need at least 4 points for a sinusoid fit")
    x = np.column_stack([np.cos(k * phi), np.sin(k * phi), np.ones_like(phi)])
    w = np.ones_like(y) if stderr is None else 1.0 / np.maximum(np.asarray(stderr, dtype=float), 1e-12)
    coef, *_ = np.linalg.lstsq(x * w[:, None], y * w, rcond=None)
    a, b, c = coef
    amp = float(math.hypot(a, b))
    resid = y - x @ coef
    rms = float(math.sqrt(np.mean(resid**2)))
    if stderr is not None:
        cov = np.linalg.pinv((x * w[:, None]).T @ (x * w[:, None]))
    else:
        dof = max(1, phi.size - 3)
        cov = np.linalg.pinv(x.T @ x) * (resid @ resid / dof)
    if amp < 1e-12:
        return SinusoidFit(0.0, 0.0, float(c), rms, float(math.sqrt(max(cov[0, 0], 0))), flat=True)
    ua, ub = a / amp, b / amp
    amp_var = ua * ua * cov[0, 0] + ub * ub * cov[1, 1] + 2 * ua * ub * cov[0, 1]
    phase = wrap_phase(math.atan2(-b, a))
    return SinusoidFit(amp, phase, float(c), rms, float(math.sqrt(max(amp_var, 0.0))))


@dataclass(frozen=True)
class ParityCurve:
    phi: np.ndarray
    parity: np.ndarray
    stderr: np.ndarray


@dataclass(frozen=True)
class BellEstimate:
    populations: tuple[float, float, float, float]
    parity_amplitude: float
    fidelity: float
    stderr: float


def bell_fidelity(pops, parity_amplitude: float, pop_shots: int | None = None,
                  amplitude_stderr: float = 0.0) -> BellEstimate:
    """F = (P_uu + P_dd)/2 + C/2 with binomial error propagation."""
    pops = tuple(float(p) for p in pops)
    if any(p < -1e-12 or p > 1 + 1e-12 for p in pops):
        raise ValueError("populations must lie in [0, 1]")
    if parity_amplitude < 0:
        raise ValueError("parity amplitude must be non-negative")
    if parity_amplitude > 1 + 3 * amplitude_stderr + 1e-12:
        raise DataInconsistencyError(f"parity amplitude {parity_amplitude:.4f} exceeds 1 by more than 3 sigma")
    same = pops[0] + pops[3]
    var_same = same * (1 - same) / pop_shots if pop_shots else 0.0
    f = 0.5 * same + 0.5 * min(parity_amplitude, 1.0)
    err = 0.5 * math.sqrt(var_same + amplitude_stderr**2)
    return BellEstimate(pops, float(parity_amplitude), float(min(1.0, max(0.0, f))), float(err))


def parity_scan(template: Callable[[float], "object"], phis, shots: int, budget, seed: int,
                executor, thermal, first_index: int = 0) -> ParityCurve:
    """Parity versus analysis phase; each grid point gets its own shot indices."""
    phis = np.asarray(phis, dtype=float)
    if phis.size < 8:
        raise ValueError("parity scan needs at least 8 phase points")
    par, err = [], []
    for i, phi in enumerate(phis):
        recs = executor.execute(template(float(phi)), thermal, shots, seed, first_index=first_index + i * shots,
                                settings={"phi": float(phi)})
        p, e = parity_from_records(recs)
        par.append(p)
        err.append(e)
    return ParityCurve(phis, np.array(par), np.array(err))


@dataclass(frozen=True)
class CHSHSettings:
    a: float = 0.0
    a_prime: float = math.pi / 2
    b: float = math.pi / 4
    b_prime: float = 3 * math.pi / 4

    def __post_init__(self):
        for name in ("a", "a_prime", "b", "b_prime"):
            object.__setattr__(self, name, wrap_phase(getattr(self, name)))

    def shifted(self, be: float = 0.0, mg: float = 0.0) -> "CHSHSettings":
        return CHSHSettings(self.a + be, self.a_prime + be, self.b + mg, self.b_prime + mg)

    def pairs(self):
        return (("a", "b"), ("a", "b_prime"), ("a_prime", "b"), ("a_prime", "b_prime"))


CHSH_CONVENTION = "B = |E(a,b) - E(a,b')| + |E(a',b) + E(a',b')|, E = P(same) - P(different)"


@dataclass(frozen=True)
class CHSHResult:
    B: float
    stderr: float
    correlations: dict
    correlation_stderr: dict
    settings: CHSHSettings
    convention: str = CHSH_CONVENTION


def chsh_sum(e: dict) -> float:
    return abs(e[("a", "b")] - e[("a", "b_prime")]) + abs(e[("a_prime", "b")] + e[("a_prime", "b_prime")])


def chsh(settings: CHSHSettings, shots: int, budget, seed: int, executor, thermal,
         template: Callable[[float, float], "object"], first_index: int = 0) -> CHSHResult:
    """Estimate the four correlations and the CHSH sum.

    ``template(phi_be, phi_mg)`` returns the state preparation followed by
    analysis pulses with the given phases.
    """
    phases = [settings.a, settings.a_prime, settings.b, settings.b_prime]
    if len({round(p, 12) for p in phases[:2]}) < 2 or len({round(p, 12) for p in phases[2:]}) < 2:
        raise ValueError("CHSH settings must be distinct per species")
    e, err = {}, {}
    for i, (sa, sb) in enumerate(settings.pairs()):
        pa, pb = getattr(settings, sa), getattr(settings, sb)
        recs = executor.execute(template(pa, pb), thermal, shots, seed, first_index=first_index + i * shots,
                                settings={"phi_be": pa, "phi_mg": pb})
        e[(sa, sb)], err[(sa, sb)] = parity_from_records(recs)
    b = chsh_sum(e)
    b_err = math.sqrt(sum(v * v for v in err.values()))
    return CHSHResult(b, b_err, e, err, settings)
