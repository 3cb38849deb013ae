"""Pulse programs, gate constructions, the phase-gate calibration and the
shot executor.

Pulse phases follow :func:`ionlogic.dynamics.carrier_unitary`.  Laser pulses
(carriers, sidebands, MS drives) pick up the static beam-path offsets of the
:class:`Register` plus the per-shot drift; microwave carriers do not.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from functools import cached_property, lru_cache
from typing import Callable, Union

import numpy as np
import scipy.linalg
from scipy.optimize import minimize_scalar

from . import dynamics as dyn
from .dynamics import Model, MSDriveParams, SpeciesParams, TWO_PI
from .fockspace import (
    CutoffTooSmallError,
    QuantumState,
    RegisterShape,
    ThermalSpec,
    UP,
    compose_state,
    qubit_populations,
    reduced_qubit_density,
    species_index,
    thermal_weights,
)
from .noise import (
    NoiseBudget,
    NoiseRates,
    ShotNoise,
    apply_heating_jump,
    apply_scattering,
    sample_shot,
    z_phase,
)
from .readout import DetectorModel, ShotRecord, detect, project_spins

log = logging.getLogger(__name__)

G_TARGET = np.diag([1, 1j, 1j, 1]).astype(complex)
CNOT_BE_MG = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)
CNOT_MG_BE = np.array([[1, 0, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0], [0, 1, 0, 0]], dtype=complex)
SWAP = np.array([[1, 0, 0, 0], [0, 0, 1, 0], [0, 1, 0, 0], [0, 0, 0, 1]], dtype=complex)


class StaleCalibrationError(ValueError):
    """Calibration was produced for different drive parameters."""


class CalibrationError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


# ---------------------------------------------------------------------------
# pulses


@dataclass(frozen=True)
class Carrier:
    species: str
    theta: float
    phi: float = 0.0
    source: str = "microwave"

    def __post_init__(self):
        species_index(self.species)
        if self.theta < 0:
            raise ValueError("theta must be non-negative")
        if self.source not in ("laser", "microwave"):
            raise ValueError("source must be 'laser' or 'microwave'")


@dataclass(frozen=True)
class Sideband:
    species: str
    branch: str
    theta: float
    phi: float = 0.0

    def __post_init__(self):
        species_index(self.species)
        if self.branch not in ("red", "blue"):
            raise ValueError("branch must be 'red' or 'blue'")
        if self.theta < 0:
            raise ValueError("theta must be non-negative")


@dataclass(frozen=True)
class MSDrive:
    drive: MSDriveParams


@dataclass(frozen=True)
class Wait:
    duration: float

    def __post_init__(self):
        if self.duration < 0:
            raise ValueError("duration must be non-negative")


@dataclass(frozen=True)
class Measure:
    pass


Pulse = Union[Carrier, Sideband, MSDrive, Wait, Measure]


@dataclass(frozen=True)
class Timing:
    """Rabi rates that set the durations of carrier and microwave pulses."""

    laser_carrier_rabi: float = TWO_PI * 250e3
    microwave_rabi: float = TWO_PI * 25e3


@dataclass(frozen=True)
class Sequence:
    pulses: tuple
    name: str = ""
    tag: str = ""

    def __post_init__(self):
        pulses = tuple(self.pulses)
        measures = [i for i, p in enumerate(pulses) if isinstance(p, Measure)]
        if len(measures) > 1 or (measures and measures[0] != len(pulses) - 1):
            raise ValueError("a sequence holds at most one Measure and it must be last")
        object.__setattr__(self, "pulses", pulses)

    def __add__(self, other: "Sequence") -> "Sequence":
        return Sequence(self.body + other.pulses, self.name or other.name, self.tag or other.tag)

    @property
    def body(self) -> tuple:
        return tuple(p for p in self.pulses if not isinstance(p, Measure))

    @property
    def measured(self) -> bool:
        return bool(self.pulses) and isinstance(self.pulses[-1], Measure)

    def with_measure(self) -> "Sequence":
        return self if self.measured else Sequence(self.pulses + (Measure(),), self.name, self.tag)

    def durations(self, register: "Register | None" = None) -> list[float]:
        reg = register or Register()
        return [reg.pulse_duration(p) for p in self.pulses]

    def total_duration(self, register: "Register | None" = None) -> float:
        return float(sum(self.durations(register)))


def _fmt(x: float) -> str:
    return repr(float(x))


def format_sequence(seq: Sequence, register: "Register | None" = None) -> str:
    """One pulse per line: ``<index> <variant> species=.. theta=.. phi=.. dur=..``."""
    reg = register or Register()
    lines = []
    for i, p in enumerate(seq.pulses):
        dur = _fmt(reg.pulse_duration(p))
        if isinstance(p, Carrier):
            lines.append(f"{i} carrier-{p.source} species={p.species} theta={_fmt(p.theta)} phi={_fmt(p.phi)} dur={dur}")
        elif isinstance(p, Sideband):
            lines.append(f"{i} sideband-{p.branch} species={p.species} theta={_fmt(p.theta)} phi={_fmt(p.phi)} dur={dur}")
        elif isinstance(p, MSDrive):
            lines.append(f"{i} ms species=Be,Mg theta=0.0 phi=0.0 dur={dur}")
        elif isinstance(p, Wait):
            lines.append(f"{i} wait species=- theta=0.0 phi=0.0 dur={dur}")
        else:
            lines.append(f"{i} measure species=Be,Mg theta=0.0 phi=0.0 dur=0.0")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# register / executor


@dataclass(frozen=True)
class Register:
    """Physical configuration shared by every pulse of an experiment."""

    species: tuple[SpeciesParams, SpeciesParams] = field(default_factory=dyn.default_species)
    mode: dyn.ModeParams = field(default_factory=dyn.ModeParams)
    shape: RegisterShape = RegisterShape(12)
    model: Model = Model.LAMB_DICKE
    timing: Timing = field(default_factory=Timing)
    path: tuple[float, float] = (0.0, 0.0)
    ms_offset: float = 0.0
    stark_shifts: tuple[float, float] = (0.0, 0.0)
    laser_carrier_debye_waller: bool = False
    ms_slices: int = 32

    def __post_init__(self):
        object.__setattr__(self, "model", Model(self.model))
        object.__setattr__(self, "species", tuple(self.species))
        object.__setattr__(self, "path", tuple(float(p) for p in self.path))

    # -- timing -----------------------------------------------------------
    def sideband_rate(self, j: int) -> float:
        """Sideband Rabi rate of the n=0 -> 1 transition."""
        sp = self.species[j]
        return dyn.sideband_coupling(0, 1, sp.eta, sp.carrier_rabi, self.model)

    def pulse_duration(self, p) -> float:
        if isinstance(p, Carrier):
            rate = self.timing.laser_carrier_rabi if p.source == "laser" else self.timing.microwave_rabi
            return p.theta / rate
        if isinstance(p, Sideband):
            return p.theta / self.sideband_rate(species_index(p.species))
        if isinstance(p, MSDrive):
            return p.drive.duration
        if isinstance(p, Wait):
            return p.duration
        return 0.0

    def prepare_drive(self, drive: MSDriveParams, drift=(0.0, 0.0)) -> MSDriveParams:
        """Bind a drive to this register's model, path offsets and Stark shifts."""
        led = replace(drive.ledger, path=self.path, drift=tuple(drift), ms_offset=self.ms_offset)
        shifts = drive.shifts if any(drive.shifts) else self.stark_shifts
        return replace(drive, ledger=led, model=self.model, shifts=shifts)

    def with_shape(self, shape: RegisterShape) -> "Register":
        return replace(self, shape=shape)

    def for_thermal(self, thermal: ThermalSpec) -> "Register":
        """Register whose cutoff is at least the default for ``thermal``."""
        default = RegisterShape.for_nbar(thermal.nbar)
        if default.n_max > self.shape.n_max:
            return self.with_shape(default)
        return self

    # -- pulse application ----------------------------------------------
    def _carrier_op(self, p: Carrier, j: int, detuning: float, offset: float):
        rate = self.timing.laser_carrier_rabi if p.source == "laser" else self.timing.microwave_rabi
        dur = p.theta / rate
        phi = p.phi + (offset if p.source == "laser" else 0.0)
        if p.source == "laser" and self.laser_carrier_debye_waller and self.model is Model.EXACT_LAGUERRE:
            dw = dyn.debye_waller(self.shape.n_fock, self.species[j].eta)
            dw = dw / dw[0]
            return np.stack([_rotation(rate * f, detuning, phi, dur) for f in dw])
        return _rotation(rate, detuning, phi, dur)

    def _sideband_unitary(self, p: Sideband, j: int, offset: float) -> np.ndarray:
        return _sideband_unitary_cached(self.species[j], self.model, self.shape, j, p.branch, p.theta,
                                        dyn.wrap_phase(p.phi + offset))

    def ms_slices_for(self, drive: MSDriveParams):
        return dyn.ms_propagator_slices(drive, self.species, self.shape, self.ms_slices)

    def laser_windows(self, seq: Sequence) -> list[tuple[float, float]]:
        out, t = [], 0.0
        for p in seq.pulses:
            d = self.pulse_duration(p)
            if isinstance(p, (Sideband, MSDrive)) or (isinstance(p, Carrier) and p.source == "laser"):
                out.append((t, t + d))
            t += d
        return out

    def evolve(self, seq: Sequence, state: QuantumState, noise: ShotNoise | None = None,
               budget: NoiseBudget | None = None) -> tuple[QuantumState, dict]:
        """Run the pulses of ``seq`` on ``state``; returns ``(state, flags)``."""
        noise = noise or ShotNoise()
        drift = noise.path_phase_offsets
        det = noise.detunings
        scat = list(noise.scattering)
        jumps = list(noise.heating)
        flags = {"scatter_events": len(scat), "heating_jumps": len(jumps), "vacuum_annihilations": 0}
        psi = state.tensor.copy()
        shape = self.shape
        t = 0.0

        def pop_events(t0, t1):
            evs = [e for e in scat if t0 <= e.time < t1] + [e for e in jumps if t0 <= e.time < t1]
            evs.sort(key=lambda e: e.time)
            for e in evs:
                (scat if hasattr(e, "channel") else jumps).remove(e)
            return evs

        def apply_event(psi, e):
            st = QuantumState.from_tensor(psi, shape, normalize=True)
            if hasattr(e, "channel"):
                st = apply_scattering(st, e.species, e.channel, draw=e.draw)
            else:
                try:
                    st, flagged = apply_heating_jump(st, e.direction)
                except CutoffTooSmallError:
                    st, flagged = apply_heating_jump(st, e.direction, strict=False)
                    flags["cutoff_overflow"] = flags.get("cutoff_overflow", 0) + 1
                    log.debug("heating jump truncated at n_max=%d", shape.n_max)
                flags["vacuum_annihilations"] += int(flagged)
            return st.tensor.copy()

        def free_phase(psi, dur):
            for j in (0, 1):
                if det[j] and dur:
                    psi = dyn.apply_qubit_op(psi, z_phase(det[j] * dur), j)
            return psi

        for p in seq.pulses:
            if isinstance(p, Measure):
                break
            dur = self.pulse_duration(p)
            t0, t1 = t, t + dur
            evs = pop_events(t0, t1)
            if isinstance(p, Carrier):
                j = species_index(p.species)
                offset = dyn.wrap_phase(self.path[j] + drift[j])
                psi = dyn.apply_qubit_op(psi, self._carrier_op(p, j, det[j], offset), j)
                for e in evs:
                    psi = apply_event(psi, e)
            elif isinstance(p, Sideband):
                j = species_index(p.species)
                offset = dyn.wrap_phase(self.path[j] + drift[j])
                u = self._sideband_unitary(p, j, offset)
                psi = free_phase(psi, dur / 2)
                psi = (u @ psi.reshape(-1)).reshape(psi.shape)
                psi = free_phase(psi, dur / 2)
                for e in evs:
                    psi = apply_event(psi, e)
            elif isinstance(p, MSDrive):
                drive = self.prepare_drive(p.drive, drift)
                base, v = self.ms_slices_for(drive)
                n_sl = len(base) - 1
                vec = psi.reshape(-1) * v.conj()
                k_prev = 0
                psi_t = vec
                for e in evs:
                    k = min(n_sl, max(0, int(round((e.time - t0) / dur * n_sl))))
                    psi_t = _slice_step(base, k_prev, k, psi_t)
                    full = (psi_t * v).reshape(psi.shape)
                    full = free_phase(full, (k - k_prev) / n_sl * dur)
                    full = apply_event(full, e)
                    psi_t = full.reshape(-1) * v.conj()
                    k_prev = k
                psi_t = _slice_step(base, k_prev, n_sl, psi_t)
                psi = (psi_t * v).reshape(psi.shape)
                psi = free_phase(psi, (n_sl - k_prev) / n_sl * dur)
            elif isinstance(p, Wait):
                last = t0
                for e in evs:
                    psi = free_phase(psi, e.time - last)
                    psi = apply_event(psi, e)
                    last = e.time
                psi = free_phase(psi, t1 - last)
            t = t1
        # events after the last pulse touch nothing measurable
        norm = np.linalg.norm(psi)
        return QuantumState.from_tensor(psi / norm, shape), flags

    # -- noiseless helpers ----------------------------------------------
    def run_pure(self, seq: Sequence, state: QuantumState) -> QuantumState:
        return self.evolve(seq, state)[0]

    def qubit_matrix(self, seq: Sequence, n: int = 0) -> np.ndarray:
        """4x4 map from input qubit basis states with the motion in ``|n>``
        to the output qubit amplitudes with the motion in ``|n>``."""
        m = np.zeros((4, 4), dtype=complex)
        for col in range(4):
            st = compose_state(col // 2, col % 2, n, self.shape)
            out = self.run_pure(seq, st).tensor
            m[:, col] = out[:, :, n].reshape(4)
        return m

    def thermal_populations(self, seq: Sequence, thermal: ThermalSpec, qubits=None,
                            weight_floor: float = 1e-10) -> np.ndarray:
        """Noiseless (uu, ud, du, dd) populations averaged over a thermal state."""
        q = np.array([1, 0, 0, 0], dtype=complex) if qubits is None else np.asarray(qubits, dtype=complex)
        total = np.zeros(4)
        for n, w in thermal_weights(thermal, self.shape):
            if w < weight_floor:
                continue
            st = QuantumState.from_qubits(q, self.shape, n)
            total += w * qubit_populations(self.run_pure(seq, st))
        return total / total.sum()


def _slice_step(base, k0: int, k1: int, vec: np.ndarray) -> np.ndarray:
    if k1 == k0:
        return vec
    if k0 == 0:
        return base[k1] @ vec
    return base[k1] @ (base[k0].conj().T @ vec)


def _rotation(rabi: float, detuning: float, phi: float, duration: float) -> np.ndarray:
    """Closed form of exp(-i t (rabi/2 sigma_phi + detuning/2 sigma_z))."""
    if detuning == 0:
        return dyn.carrier_unitary(rabi * duration, phi)
    w = math.hypot(rabi, detuning)
    c, s = math.cos(w * duration / 2), math.sin(w * duration / 2)
    nx = rabi / w
    nz = detuning / w
    return np.array(
        [[c - 1j * s * nz, -1j * s * nx * np.exp(1j * phi)],
         [-1j * s * nx * np.exp(-1j * phi), c + 1j * s * nz]],
        dtype=complex,
    )


@lru_cache(maxsize=256)
def _sideband_unitary_cached(species: SpeciesParams, model: Model, shape: RegisterShape, j: int,
                             branch: str, theta: float, phi: float) -> np.ndarray:
    n = shape.n_fock
    g = np.array([dyn.sideband_coupling(m, 1, species.eta, 1.0, model) for m in range(n - 1)])
    # sign of the Laguerre factor matters for high n
    g = g * np.sign(dyn._ladder_element(np.arange(n - 1), species.eta, model))
    lower = np.diag(g.astype(complex), 1)  # A, normalized to Omega_0
    if branch == "blue":
        motion = lower.conj().T  # sigma^+ A^+ : |down,n> -> |up,n+1>
    else:
        motion = lower  # sigma^+ A : |down,n> -> |up,n-1>
    rate0 = g[0]
    k = np.exp(1j * phi) * np.kron(dyn.embed_qubit_op(dyn.SIGMA_PLUS, j, 1), motion)
    h = 0.5 * (k + k.conj().T)
    u = scipy.linalg.expm(-1j * h * (theta / rate0))
    u.flags.writeable = False
    return u


# ---------------------------------------------------------------------------
# calibration record and gate builders


def drive_key(drive: MSDriveParams) -> str:
    """Hash of the drive parameters a calibration depends on."""
    led = drive.ledger
    payload = repr((drive.rabi, drive.delta, drive.duration, led.rf_r, led.rf_b, drive.model.value,
                    drive.shifts, drive.spectator, drive.spectator_enabled))
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class GCalibration:
    ramsey_phase_corrections: tuple[float, float] = (0.0, 0.0)
    ms_phase_setting: float = 0.0
    stark_shift_compensation: tuple[float, float] = (0.0, 0.0)
    drive_key: str | None = None

    def __post_init__(self):
        vals = (*self.ramsey_phase_corrections, self.ms_phase_setting, *self.stark_shift_compensation)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("calibration phases must be finite")

    @classmethod
    def nominal(cls, drive: MSDriveParams) -> "GCalibration":
        return cls(drive_key=drive_key(drive))


def _nominal_phi_s(drive: MSDriveParams, j: int) -> float:
    # reference for the Ramsey pulses: mean of the two sideband phases
    led = drive.ledger
    return 0.5 * (led.rf_r[j] + led.rf_b[j])


def _check_cal(cal: GCalibration, drive: MSDriveParams):
    if cal.drive_key is not None and cal.drive_key != drive_key(drive):
        raise StaleCalibrationError("calibration was made for different drive parameters")


def phase_gate_pulses(cal: GCalibration, drive: MSDriveParams) -> tuple:
    ms = replace(drive, ledger=replace(drive.ledger, ms_setting=cal.ms_phase_setting))
    first = [dyn.wrap_phase(_nominal_phi_s(drive, j) - math.pi / 2) for j in (0, 1)]
    last = [dyn.wrap_phase(first[j] + math.pi + cal.ramsey_phase_corrections[j]) for j in (0, 1)]
    return (
        Carrier("Be", math.pi / 2, first[0], "laser"),
        Carrier("Mg", math.pi / 2, first[1], "laser"),
        MSDrive(ms),
        Carrier("Be", math.pi / 2, last[0], "laser"),
        Carrier("Mg", math.pi / 2, last[1], "laser"),
    )


def build_phase_gate_G(cal: GCalibration, drive: MSDriveParams) -> Sequence:
    """MS drive wrapped in laser pi/2 pairs: diag(1, i, i, 1) when calibrated."""
    _check_cal(cal, drive)
    return Sequence(phase_gate_pulses(cal, drive), "G", "gate")


def build_cnot(target: str, cal: GCalibration, drive: MSDriveParams) -> Sequence:
    """Microwave pi/2 pulses on ``target`` around the phase gate.

    Equals the textbook CNOT (control |down> flips the target) up to local
    Z phases.
    """
    species_index(target)
    g = build_phase_gate_G(cal, drive)
    pulses = (Carrier(target, math.pi / 2, 0.0), *g.pulses, Carrier(target, math.pi / 2, math.pi / 2))
    return Sequence(pulses, f"CNOT(target={target})", "gate")


def build_swap(cal: GCalibration, drive: MSDriveParams) -> Sequence:
    pulses = ()
    for target in ("Mg", "Be", "Mg"):
        pulses += build_cnot(target, cal, drive).pulses
    return Sequence(pulses, "SWAP", "gate")


def analysis_pulses(phi_be: float, phi_mg: float | None = None, source: str = "microwave") -> tuple:
    phi_mg = phi_be if phi_mg is None else phi_mg
    return (Carrier("Be", math.pi / 2, phi_be, source), Carrier("Mg", math.pi / 2, phi_mg, source))


def build_bell(variant: str, cal: GCalibration | None, drive: MSDriveParams) -> Sequence:
    """Phi+ preparation from |up up>.

    laser_analysis: the bare MS drive (analysis pulses later are laser
    carriers).  microwave: microwave pi/2 on each qubit around the phase gate.
    """
    if variant == "laser_analysis":
        return Sequence((MSDrive(drive),), "bell-laser", "bell")
    if variant == "microwave":
        if cal is None:
            raise ValueError("microwave Bell variant needs a phase-gate calibration")
        g = build_phase_gate_G(cal, drive)
        pulses = analysis_pulses(0.0) + g.pulses + analysis_pulses(0.0)
        return Sequence(pulses, "bell-microwave", "bell")
    raise ValueError(f"unknown Bell variant {variant!r}")


def analysis_source(variant: str) -> str:
    return "laser" if variant == "laser_analysis" else "microwave"


def build_qls(variant: str, cal: GCalibration | None = None, drive: MSDriveParams | None = None) -> Sequence:
    """Map the Be qubit onto Mg (initially |up>).

    conventional: sideband pi pulses calibrated on n=0 that first add a
    quantum conditioned on Be |down>, then remove it while flipping Mg.
    With the Hamiltonian sign convention used here both steps are the
    sigma^+ a^+ ("blue") branch.
    cnot_transfer: CNOT with Mg as target.
    """
    if variant == "conventional":
        pulses = (Sideband("Be", "blue", math.pi, 0.0), Sideband("Mg", "blue", math.pi, 0.0))
        return Sequence(pulses, "qls-conventional", "readout")
    if variant == "cnot_transfer":
        if cal is None or drive is None:
            raise ValueError("cnot_transfer needs a calibration and a drive")
        return Sequence(build_cnot("Mg", cal, drive).pulses, "qls-cnot", "readout")
    raise ValueError(f"unknown QLS variant {variant!r}")


def build_swap_ramsey(phi: float, cal: GCalibration, drive: MSDriveParams) -> Sequence:
    pulses = (Carrier("Be", math.pi / 2, 0.0),) + build_swap(cal, drive).pulses
    pulses += (Carrier("Mg", math.pi / 2, phi), Measure())
    return Sequence(pulses, "swap-ramsey", "ramsey")


def composite_transfer(species: str, source: str = "microwave") -> Sequence:
    """Detuning-robust transfer: (pi/2, 0), (3pi/2, pi/2), (pi/2, 0)."""
    pulses = (
        Carrier(species, math.pi / 2, 0.0, source),
        Carrier(species, 3 * math.pi / 2, math.pi / 2, source),
        Carrier(species, math.pi / 2, 0.0, source),
    )
    return Sequence(pulses, f"composite-transfer({species})", "state-prep")


# ---------------------------------------------------------------------------
# calibration


def _golden_refine(f: Callable[[float], float], grid_points: int = 64, tol: float = 1e-6) -> tuple[float, float]:
    """Minimize a 2pi-periodic function: coarse grid, then a bounded 1-D search."""
    xs = np.linspace(0.0, TWO_PI, grid_points, endpoint=False)
    vals = [f(x) for x in xs]
    i = int(np.argmin(vals))
    h = TWO_PI / grid_points
    res = minimize_scalar(f, bounds=(xs[i] - h, xs[i] + h), method="bounded", options={"xatol": tol})
    x, fx = float(res.x), float(res.fun)
    if fx > vals[i]:
        x, fx = float(xs[i]), float(vals[i])
    return dyn.wrap_phase(x), fx


def calibrate_G(register: Register, drive: MSDriveParams, threshold: float = 1e-4) -> GCalibration:
    """Two-step phase calibration of the Ramsey-wrapped MS gate.

    1. MS beams far detuned (Stark shifts only): choose each final pi/2
       phase so that each qubit returns to |up>.
    2. MS tuned: scan the common MS phase, then touch up the final pi/2
       phases, so that |up up> maps back to itself.
    """
    reg = register.with_shape(RegisterShape(max(4, register.shape.n_max))) if register.shape.n_max < 4 else register
    start = compose_state(UP, UP, 0, reg.shape)
    key = drive_key(drive)

    def p_uu(cal, d):
        seq = Sequence(phase_gate_pulses(cal, d))
        return qubit_populations(reg.run_pure(seq, start))

    stark_only = replace(drive, sidebands=False)
    comp = [0.0, 0.0]
    for j in (0, 1):
        def cost(c, j=j):
            corr = list(comp)
            corr[j] = c
            p = p_uu(GCalibration(tuple(corr)), stark_only)
            # probability of species j in |up>
            return -(p[0] + (p[1] if j == 0 else p[2]))
        comp[j], _ = _golden_refine(cost)

    def ms_cost(x):
        return -p_uu(GCalibration(tuple(comp), x), drive)[0]

    ms_setting, _ = _golden_refine(ms_cost)

    corr = list(comp)
    for j in (0, 1):
        def cost(c, j=j):
            cc = list(corr)
            cc[j] = c
            return -p_uu(GCalibration(tuple(cc), ms_setting), drive)[0]
        c0 = corr[j]
        res = minimize_scalar(cost, bounds=(c0 - 0.05, c0 + 0.05), method="bounded", options={"xatol": 1e-7})
        if res.fun < cost(c0):
            corr[j] = dyn.wrap_phase(float(res.x))

    cal = GCalibration(tuple(corr), ms_setting, tuple(comp), key)
    p = p_uu(cal, drive)[0]
    if p < 1 - threshold:
        raise CalibrationError(f"best |up up> return probability {p:.6f} below 1 - {threshold:g}", best=cal)
    return cal


# ---------------------------------------------------------------------------
# distances between qubit operators


def global_phase_distance(m: np.ndarray, target: np.ndarray) -> float:
    """min over global phase of the spectral-norm distance."""
    ov = np.trace(target.conj().T @ m)
    ph = ov / abs(ov) if abs(ov) > 1e-15 else 1.0
    return float(np.linalg.norm(m - ph * target, 2))


def _zz(a: float, b: float) -> np.ndarray:
    return np.kron(np.diag([1, np.exp(1j * a)]), np.diag([1, np.exp(1j * b)]))


def local_phase_distance(m: np.ndarray, target: np.ndarray) -> float:
    """Distance to ``target`` minimized over local Z phases before and after
    (and a global phase)."""
    from scipy.optimize import minimize

    def cost(x):
        t = _zz(x[2], x[3]) @ target @ _zz(x[0], x[1])
        return global_phase_distance(m, t)

    best = math.inf
    for start in np.linspace(0, TWO_PI, 4, endpoint=False):
        res = minimize(cost, x0=np.full(4, start), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-12, "maxiter": 8000})
        best = min(best, res.fun)
    return float(best)


# ---------------------------------------------------------------------------
# shot execution


class Executor:
    """Executes sequences shot by shot with noise and photon detection."""

    def __init__(self, register: Register, budget: NoiseBudget | None = None,
                 detector: DetectorModel | None = None, threads: int | None = None):
        self.register = register
        self.budget = budget or NoiseBudget.noiseless()
        self.detector = detector or DetectorModel.ideal()
        env = os.environ.get("IONLOGIC_THREADS")
        self.threads = threads or (int(env) if env else 1)

    @cached_property
    def rates(self) -> NoiseRates:
        return noise_rates(self.register, self.budget)

    def _initial(self, n: int, qubits, flips) -> QuantumState:
        q = np.array([1, 0, 0, 0], dtype=complex) if qubits is None else np.asarray(qubits, dtype=complex)
        q = q.reshape(2, 2)
        if flips[0]:
            q = q[::-1, :]
        if flips[1]:
            q = q[:, ::-1]
        return QuantumState.from_qubits(q.reshape(4), self.register.shape, n)

    def run_shot(self, seq: Sequence, thermal: ThermalSpec, shot_index: int, master_seed: int,
                 qubits=None, settings: dict | None = None, weights=None) -> ShotRecord:
        rng = shot_rng(master_seed, shot_index)
        reg = self.register
        if weights is None:
            weights = thermal_weights(thermal, reg.shape)
        ns = np.array([w[0] for w in weights])
        ps = np.array([w[1] for w in weights])
        n = int(ns[rng.choice(len(ns), p=ps)]) if len(ns) > 1 else int(ns[0])
        duration = max(seq.total_duration(reg), 1e-12)
        noise = sample_shot(self.budget, duration, rng, self.rates, reg.laser_windows(seq))
        state = self._initial(n, qubits, noise.prep_flips)
        final, flags = reg.evolve(seq, state, noise, self.budget)
        outcome, _ = project_spins(final, rng)
        measured, counts = detect(outcome, self.detector, rng, noise.detect_flips)
        return ShotRecord(outcome=measured, true_outcome=outcome, counts=counts, settings=dict(settings or {}),
                          flags={**flags, "n_initial": n})

    def execute(self, seq: Sequence, thermal: ThermalSpec, shots: int, master_seed: int,
                qubits=None, settings: dict | None = None, first_index: int = 0) -> list[ShotRecord]:
        """Run ``shots`` repetitions; records are ordered by shot index."""
        if shots < 1:
            raise ValueError("shots must be >= 1")
        weights = thermal_weights(thermal, self.register.shape)
        _ = self.rates  # resolve once before workers start
        idx = range(first_index, first_index + shots)

        def work(i):
            return self.run_shot(seq, thermal, i, master_seed, qubits, settings, weights)

        if self.threads <= 1:
            return [work(i) for i in idx]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(work, idx))


def shot_rng(master_seed: int, shot_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=int(master_seed), spawn_key=(int(shot_index),)))


def execute(seq: Sequence, initial: ThermalSpec, budget: NoiseBudget, shots: int, master_seed: int,
            register: Register | None = None, detector: DetectorModel | None = None,
            threads: int | None = None, qubits=None) -> list[ShotRecord]:
    reg = (register or Register()).for_thermal(initial)
    return Executor(reg, budget, detector, threads).execute(seq, initial, shots, master_seed, qubits)


# ---------------------------------------------------------------------------
# budget -> event rates


def _bell_reference(register: Register, drive: MSDriveParams):
    reg = register.with_shape(RegisterShape(max(register.shape.n_max, 20)))
    d = reg.prepare_drive(drive)
    base, v = reg.ms_slices_for(d)
    psi0 = compose_state(UP, UP, 0, reg.shape).amplitudes * v.conj()
    ideal = QuantumState((base[-1] @ psi0) * v, reg.shape)
    w, vecs = np.linalg.eigh(reduced_qubit_density(ideal))
    target = vecs[:, -1]
    return reg, base, v, psi0, target


def _infidelity(state_vec, v, shape, target) -> float:
    st = QuantumState.from_tensor(state_vec * v, shape, normalize=True)
    rho = reduced_qubit_density(st)
    return 1.0 - float(np.vdot(target, rho @ target).real)


@lru_cache(maxsize=16)
def event_infidelity(register: Register, drive: MSDriveParams, kind: str, species: int = 1) -> float:
    """Mean Bell infidelity caused by one event at a uniformly random time
    during the gate.  ``kind`` is a scattering channel name or ``"heating"``."""
    reg, base, v, psi0, target = _bell_reference(register, drive)
    n_sl = len(base) - 1
    total, count = 0.0, 0
    draws = (0.125, 0.375, 0.625, 0.875)
    for k in range(n_sl):
        # slice midpoints are approximated by alternating boundaries
        mid = base[k] @ psi0
        st = QuantumState.from_tensor(mid * v, reg.shape, normalize=True)
        variants = []
        if kind == "heating":
            variants.append(apply_heating_jump(st, +1)[0])
        else:
            variants.extend(apply_scattering(st, species, kind, draw=d) for d in draws)
        for var in variants:
            vec = var.amplitudes * v.conj()
            fin = _slice_step(base, k, n_sl, vec)
            total += _infidelity(fin, v, reg.shape, target)
            count += 1
    return total / count


def noise_rates(register: Register, budget: NoiseBudget, drive: MSDriveParams | None = None) -> NoiseRates:
    """Convert budgeted per-gate infidelities into event rates."""
    drive = drive or dyn.gate_drive(model=Model.LAMB_DICKE)
    reg = replace(register, model=Model.LAMB_DICKE, stark_shifts=(0.0, 0.0), path=(0.0, 0.0), ms_offset=0.0)
    t_gate = drive.duration
    scatter = []
    for j in (0, 1):
        p = budget.p_scatter[j]
        scatter.append(p / (event_infidelity(reg, drive, budget.scatter_channel, j) * t_gate) if p > 0 else 0.0)
    up = 0.0
    if budget.p_heating > 0:
        up = budget.p_heating / (event_infidelity(reg, drive, "heating") * t_gate)
    return NoiseRates(tuple(scatter), up, up * budget.heating_down_fraction)
