"""Experiment harness: flat-text configs, named experiments, CSV output and
summary tables.  :func:`main` is the ``ionlogic`` command.

Config files are UTF-8 ``key = value`` lines.  ``#`` starts a comment and
dotted keys address a section (``noise.p_scatter_mg = 6e-3``).  Tuples are
comma separated, ``auto`` stands for a derived value.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import (
    BE9_MASS,
    MG25_MASS,
    OMEGA_Z_IN_PHASE,
    T_MS_DEFAULT,
    TWO_PI,
    Model,
    ModeParams,
    MSDriveParams,
    SpeciesParams,
    gate_drive,
    geometric_phase,
    ms_unitary,
    phi_basis,
    wrap_phase,
)
from .fockspace import CutoffTooSmallError, QuantumState, RegisterShape, ThermalSpec
from .noise import NoiseBudget
from .readout import (
    CHSHSettings,
    DetectorModel,
    SpeciesDetector,
    bell_fidelity,
    chsh,
    fit_sinusoid,
    parity_of,
    parity_scan,
    populations,
)
from .sequences import (
    CNOT_BE_MG,
    G_TARGET,
    SWAP,
    Carrier,
    Executor,
    Measure,
    Register,
    Sequence,
    analysis_pulses,
    analysis_source,
    build_bell,
    build_cnot,
    build_phase_gate_G,
    build_qls,
    build_swap,
    build_swap_ramsey,
    calibrate_G,
    global_phase_distance,
    local_phase_distance,
)

log = logging.getLogger(__name__)

EXPERIMENTS = ("bell", "parity-scan", "chsh", "qls-compare", "swap-ramsey", "calibrate-g", "gate-sweep")
# experiments whose physics needs the full Laguerre couplings under model=auto
_EXACT_BY_DEFAULT = ("qls-compare", "swap-ramsey")
CSV_COLUMNS = ("record", "quantity", "group", "setting", "estimate", "stderr", "shots")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


class ConfigError(ValueError):
    """Invalid or unparsable experiment configuration."""


class ReplayMismatchError(ValueError):
    """A CSV file was produced by a different configuration."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class GateConfig:
    omega_z: float = OMEGA_Z_IN_PHASE
    eta_be: float = 0.156
    eta_mg: float = 0.265
    t_ms: float = T_MS_DEFAULT
    rabi: float | None = None  # auto: delta / 4
    delta: float | None = None  # auto: 2 pi / t_ms
    dphi_m: float = math.pi
    model: str = "auto"
    path_be: float = 1.0
    path_mg: float = 2.0
    ms_offset: float = 0.0
    debye_waller: bool = False


@dataclass(frozen=True)
class ThermalConfig:
    nbar: tuple[float, ...] = (0.05, 4.0)
    tail_tol: float = 1e-4


@dataclass(frozen=True)
class DetectorConfig:
    be_bright: float = 30.0
    be_dark: float = 3.5
    be_duration: float = 330e-6
    be_threshold: int | None = None
    mg_bright: float = 30.0
    mg_dark: float = 3.5
    mg_duration: float = 200e-6
    mg_threshold: int | None = None

    def build(self) -> DetectorModel:
        return DetectorModel(
            SpeciesDetector(self.be_bright, self.be_dark, self.be_duration, self.be_threshold),
            SpeciesDetector(self.mg_bright, self.mg_dark, self.mg_duration, self.mg_threshold),
        )


@dataclass(frozen=True)
class ScanConfig:
    points: int = 16
    variant: str = "microwave"


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a run depends on.  ``threads`` and ``out`` do not affect results."""

    experiment: str = "bell"
    shots: int = 2000
    seed: int = 0
    threads: int = 0
    out: str = ""
    gate: GateConfig = field(default_factory=GateConfig)
    thermal: ThermalConfig = field(default_factory=ThermalConfig)
    noise: NoiseBudget = field(default_factory=NoiseBudget)
    detector: DetectorConfig = field(default_factory=DetectorConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"unknown experiment {self.experiment!r}; choose from {', '.join(EXPERIMENTS)}")
        if self.shots < 1:
            raise ConfigError("shots must be >= 1")
        if self.seed < 0 or self.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.threads < 0:
            raise ConfigError("threads must be >= 0")
        if self.scan.points < 8:
            raise ConfigError("scan.points must be >= 8")
        if not self.thermal.nbar:
            raise ConfigError("thermal.nbar needs at least one value")
        if self.gate.model not in ("auto",) + tuple(m.value for m in Model):
            raise ConfigError(f"gate.model must be auto, {Model.LAMB_DICKE.value} or {Model.EXACT_LAGUERRE.value}")
        if self.scan.variant not in ("microwave", "laser_analysis"):
            raise ConfigError("scan.variant must be microwave or laser_analysis")
        try:
            for nbar in self.thermal.nbar:
                ThermalSpec(nbar, self.thermal.tail_tol)
            self.detector.build()
            self.drive()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    # -- derived objects -------------------------------------------------
    @property
    def model(self) -> Model:
        if self.gate.model == "auto":
            return Model.EXACT_LAGUERRE if self.experiment in _EXACT_BY_DEFAULT else Model.LAMB_DICKE
        return Model(self.gate.model)

    def drive(self) -> MSDriveParams:
        g = self.gate
        d = gate_drive(g.t_ms, g.dphi_m, self.model)
        delta = d.delta if g.delta is None else g.delta
        rabi = delta / 4.0 if g.rabi is None else g.rabi
        return replace(d, rabi=(rabi, rabi), delta=delta)

    def register(self, nbar: float | None = None) -> Register:
        g = self.gate
        rabi = self.drive().rabi[0]
        species = (
            SpeciesParams("Be", BE9_MASS, rabi / g.eta_be, g.eta_be),
            SpeciesParams("Mg", MG25_MASS, rabi / g.eta_mg, g.eta_mg),
        )
        reg = Register(species=species, mode=ModeParams(g.omega_z), model=self.model,
                       path=(g.path_be, g.path_mg), ms_offset=g.ms_offset,
                       laser_carrier_debye_waller=g.debye_waller)
        return reg if nbar is None else reg.for_thermal(self.thermal_spec(nbar))

    def thermal_spec(self, nbar: float | None = None) -> ThermalSpec:
        return ThermalSpec(self.thermal.nbar[0] if nbar is None else nbar, self.thermal.tail_tol)


def _format_value(v) -> str:
    if v is None:
        return "auto"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return ", ".join(_format_value(x) for x in v)
    return str(v)


def _parse_value(text: str, annotation: str):
    text = text.strip()
    optional = "None" in annotation
    base = annotation.replace("| None", "").strip()
    if optional and text == "auto":
        return None
    if base.startswith("tuple"):
        return tuple(float(x) for x in text.split(",") if x.strip())
    if base == "bool":
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"not a boolean: {text!r}")
        return low in ("true", "1", "yes")
    if base == "int":
        return int(text)
    if base == "float":
        return float(text)
    return text


_SECTIONS = {f.name: f for f in dataclasses.fields(ExperimentConfig) if dataclasses.is_dataclass(f.default_factory)}


def _section_fields(name: str):
    return {f.name: f for f in dataclasses.fields(_SECTIONS[name].default_factory)}


def serialize_config(cfg: ExperimentConfig) -> str:
    lines = ["# ionlogic experiment config"]
    for f in dataclasses.fields(cfg):
        if f.name in _SECTIONS:
            continue
        lines.append(f"{f.name} = {_format_value(getattr(cfg, f.name))}")
    for name in _SECTIONS:
        section = getattr(cfg, name)
        lines.append("")
        for f in dataclasses.fields(section):
            lines.append(f"{name}.{f.name} = {_format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"


def apply_overrides(cfg: ExperimentConfig, pairs) -> ExperimentConfig:
    """Apply ``(key, text)`` pairs; later pairs win."""
    top = {f.name: f for f in dataclasses.fields(ExperimentConfig) if f.name not in _SECTIONS}
    values = {k: getattr(cfg, k) for k in top}
    sections = {name: {} for name in _SECTIONS}
    for key, text in pairs:
        try:
            if "." in key:
                sec, sub = key.split(".", 1)
                if sec not in _SECTIONS or sub not in _section_fields(sec):
                    raise ConfigError(f"unknown config key {key!r}")
                sections[sec][sub] = _parse_value(text, str(_section_fields(sec)[sub].type))
            else:
                if key not in top:
                    raise ConfigError(f"unknown config key {key!r}")
                values[key] = _parse_value(text, str(top[key].type))
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key!r}: {exc}") from exc
    built = {}
    for name, changes in sections.items():
        try:
            built[name] = replace(getattr(cfg, name), **changes)
        except ValueError as exc:
            raise ConfigError(f"{name}: {exc}") from exc
    return ExperimentConfig(**values, **built)


def _pairs(text: str, source: str = "<config>"):
    seen = set()
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in seen:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        seen.add(key)
        yield key, value


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    return apply_overrides(ExperimentConfig(), list(_pairs(text, source)))


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc}") from exc
    return parse_config(text, str(p))


def config_hash(cfg: ExperimentConfig) -> str:
    canonical = replace(cfg, threads=0, out="")
    return hashlib.sha256(serialize_config(canonical).encode()).hexdigest()[:16]


# ---------------------------------------------------------------------------
# results


@dataclass(frozen=True)
class Row:
    quantity: str
    estimate: float
    stderr: float = 0.0
    shots: int = 0
    group: str = ""
    setting: str = ""


@dataclass
class ResultSet:
    experiment: str
    config_hash: str
    seed: int
    points: list[Row] = field(default_factory=list)
    summary: list[Row] = field(default_factory=list)
    version: str = __version__

    def value(self, quantity: str, group: str = "") -> float:
        for r in self.summary:
            if r.quantity == quantity and r.group == group:
                return r.estimate
        raise KeyError((quantity, group))

    def row(self, quantity: str, group: str = "") -> Row:
        for r in self.summary:
            if r.quantity == quantity and r.group == group:
                return r
        raise KeyError((quantity, group))

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# ionlogic {self.version}\n")
        buf.write(f"# experiment={self.experiment}\n")
        buf.write(f"# config_hash={self.config_hash}\n")
        buf.write(f"# seed={self.seed}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for record, rows in (("point", self.points), ("summary", self.summary)):
            for r in rows:
                w.writerow((record, r.quantity, r.group, r.setting, repr(float(r.estimate)),
                            repr(float(r.stderr)), r.shots))
        return buf.getvalue()

    def write(self, path) -> None:
        Path(path).write_bytes(self.to_csv().encode("utf-8"))


def read_csv_header(path) -> dict:
    meta = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line[1:].strip()
            if "=" in body:
                k, v = body.split("=", 1)
                meta[k] = v
    return meta


def check_replay(path, cfg: ExperimentConfig) -> None:
    """Raise :class:`ReplayMismatchError` unless ``path`` came from ``cfg``."""
    found = read_csv_header(path).get("config_hash")
    if found != config_hash(cfg):
        raise ReplayMismatchError(f"{path} has config hash {found}, expected {config_hash(cfg)}")


def summarize(result: ResultSet) -> str:
    """Fixed-width table of the summary rows."""
    head = f"{'quantity':<24} {'group':<28} {'estimate':>12} {'stderr':>10}"
    lines = [f"{result.experiment}  (config {result.config_hash}, seed {result.seed})", head, "-" * len(head)]
    for r in result.summary:
        lines.append(f"{r.quantity:<24} {r.group:<28} {r.estimate:>12.6g} {r.stderr:>10.3g}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# experiments


def _calibrate(cfg: ExperimentConfig):
    drive = cfg.drive()
    reg = cfg.register().with_shape(RegisterShape(12))
    return calibrate_G(reg, drive), drive


def _executor(cfg: ExperimentConfig, nbar: float) -> tuple[Executor, ThermalSpec]:
    th = cfg.thermal_spec(nbar)
    return Executor(cfg.register(nbar), cfg.noise, cfg.detector.build(), cfg.threads or None), th


def _frame_phase(cfg: ExperimentConfig, prep: Sequence, source: str) -> float:
    """Phase of the noiseless parity fringe for common analysis phases."""
    th = cfg.thermal_spec()
    reg = cfg.register(th.nbar)
    phis = np.linspace(0.0, TWO_PI, 8, endpoint=False)
    par = [parity_of(reg.thermal_populations(Sequence(prep.pulses + analysis_pulses(p, source=source)), th))
           for p in phis]
    return fit_sinusoid(phis, par, k=2).phase


def _bell_prep(cfg: ExperimentConfig):
    variant = cfg.scan.variant
    cal, drive = _calibrate(cfg) if variant == "microwave" else (None, cfg.drive())
    return build_bell(variant, cal, drive), analysis_source(variant)


def _run_bell(cfg: ExperimentConfig, result: ResultSet):
    prep, source = _bell_prep(cfg)
    ex, th = _executor(cfg, cfg.thermal.nbar[0])
    shots = cfg.shots
    pops = populations(ex.execute(prep.with_measure(), th, shots, cfg.seed))
    phis = np.linspace(0.0, TWO_PI, cfg.scan.points, endpoint=False)
    curve = parity_scan(lambda p: Sequence(prep.pulses + analysis_pulses(p, source=source) + (Measure(),)),
                        phis, shots, cfg.noise, cfg.seed, ex, th, first_index=shots)
    fit = fit_sinusoid(curve.phi, curve.parity, k=2, stderr=curve.stderr)
    est = bell_fidelity(pops, fit.amplitude, shots, fit.amplitude_stderr)
    result.points.extend(Row("parity", float(p), float(e), shots, cfg.scan.variant, repr(float(phi)))
                         for phi, p, e in zip(curve.phi, curve.parity, curve.stderr))
    for label, p in zip(("P_uu", "P_ud", "P_du", "P_dd"), pops):
        result.summary.append(Row(label, float(p), math.sqrt(p * (1 - p) / shots), shots, cfg.scan.variant))
    result.summary.append(Row("parity_contrast", fit.amplitude, fit.amplitude_stderr, shots, cfg.scan.variant))
    result.summary.append(Row("fidelity", est.fidelity, est.stderr, shots, cfg.scan.variant))


def _run_parity_scan(cfg: ExperimentConfig, result: ResultSet):
    prep, source = _bell_prep(cfg)
    ex, th = _executor(cfg, cfg.thermal.nbar[0])
    phis = np.linspace(0.0, TWO_PI, cfg.scan.points, endpoint=False)
    curve = parity_scan(lambda p: Sequence(prep.pulses + analysis_pulses(p, source=source) + (Measure(),)),
                        phis, cfg.shots, cfg.noise, cfg.seed, ex, th)
    fit = fit_sinusoid(curve.phi, curve.parity, k=2, stderr=curve.stderr)
    g = cfg.scan.variant
    result.points.extend(Row("parity", float(p), float(e), cfg.shots, g, repr(float(phi)))
                         for phi, p, e in zip(curve.phi, curve.parity, curve.stderr))
    result.summary += [
        Row("amplitude", fit.amplitude, fit.amplitude_stderr, cfg.shots, g),
        Row("phase", fit.phase, 0.0, cfg.shots, g),
        Row("offset", fit.offset, 0.0, cfg.shots, g),
        Row("fit_residual", fit.residual, 0.0, cfg.shots, g),
    ]


def _run_chsh(cfg: ExperimentConfig, result: ResultSet):
    prep, source = _bell_prep(cfg)
    ex, th = _executor(cfg, cfg.thermal.nbar[0])
    settings = CHSHSettings().shifted(be=-_frame_phase(cfg, prep, source))

    def template(a, b):
        return Sequence(prep.pulses + analysis_pulses(a, b, source=source) + (Measure(),))

    res = chsh(settings, cfg.shots, cfg.noise, cfg.seed, ex, th, template)
    names = {"a": "a", "a_prime": "a'", "b": "b", "b_prime": "b'"}
    for pair in settings.pairs():
        label = f"E({names[pair[0]]},{names[pair[1]]})"
        setting = f"{getattr(settings, pair[0])!r};{getattr(settings, pair[1])!r}"
        result.summary.append(Row(label, res.correlations[pair], res.correlation_stderr[pair], cfg.shots,
                                  cfg.scan.variant, setting))
    result.summary.append(Row("B", res.B, res.stderr, 4 * cfg.shots, cfg.scan.variant))


def _contrast_scan(cfg, nbar, make, label, result):
    ex, th = _executor(cfg, nbar)
    xs = np.linspace(0.0, TWO_PI, cfg.scan.points, endpoint=False)
    ys, es = [], []
    for i, x in enumerate(xs):
        recs = ex.execute(make(float(x)), th, cfg.shots, cfg.seed, first_index=i * cfg.shots)
        pops = populations(recs)
        p = float(pops[0] + pops[2])  # Mg in |up>
        ys.append(p)
        es.append(math.sqrt(max(p * (1 - p), 1.0 / cfg.shots) / cfg.shots))
    group = f"{label}@nbar={nbar!r}"
    result.points.extend(Row("P_mg_up", y, e, cfg.shots, group, repr(float(x))) for x, y, e in zip(xs, ys, es))
    fit = fit_sinusoid(xs, ys, k=1, stderr=es)
    result.summary.append(Row("contrast", 2 * fit.amplitude, 2 * fit.amplitude_stderr,
                              cfg.shots * len(xs), group))


def _run_qls_compare(cfg: ExperimentConfig, result: ResultSet):
    cal, drive = _calibrate(cfg)
    variants = {
        "conventional": build_qls("conventional"),
        "cnot_transfer": build_qls("cnot_transfer", cal, drive),
    }
    for nbar in cfg.thermal.nbar:
        for label, qls in variants.items():
            _contrast_scan(cfg, nbar, lambda th, q=qls: Sequence((Carrier("Be", th, 0.0),) + q.pulses + (Measure(),)),
                           label, result)


def _run_swap_ramsey(cfg: ExperimentConfig, result: ResultSet):
    cal, drive = _calibrate(cfg)
    for nbar in cfg.thermal.nbar:
        _contrast_scan(cfg, nbar, lambda phi: build_swap_ramsey(phi, cal, drive), "swap", result)


def _run_calibrate_g(cfg: ExperimentConfig, result: ResultSet):
    cal, drive = _calibrate(cfg)
    reg = cfg.register().with_shape(RegisterShape(12))
    result.summary += [
        Row("ramsey_correction", cal.ramsey_phase_corrections[0], group="Be"),
        Row("ramsey_correction", cal.ramsey_phase_corrections[1], group="Mg"),
        Row("stark_compensation", cal.stark_shift_compensation[0], group="Be"),
        Row("stark_compensation", cal.stark_shift_compensation[1], group="Mg"),
        Row("ms_phase_setting", cal.ms_phase_setting),
        Row("G_distance", global_phase_distance(reg.qubit_matrix(build_phase_gate_G(cal, drive)), G_TARGET)),
        Row("CNOT_distance", local_phase_distance(reg.qubit_matrix(build_cnot("Mg", cal, drive)), CNOT_BE_MG)),
        Row("SWAP_distance", local_phase_distance(reg.qubit_matrix(build_swap(cal, drive)), SWAP)),
    ]


def _run_gate_sweep(cfg: ExperimentConfig, result: ResultSet):
    """Branch phases after one loop versus the motional phase difference."""
    base = cfg.drive()
    reg = cfg.register().with_shape(RegisterShape(12))
    worst = 0.0
    for dphi in np.linspace(0.0, TWO_PI, cfg.scan.points, endpoint=False):
        d = reg.prepare_drive(replace(gate_drive(base.duration, float(dphi), reg.model), rabi=base.rabi,
                                      delta=base.delta))
        u = ms_unitary(d, reg.species, reg.shape)
        omega, delta = d.rabi[0], d.delta
        scale = 8 * math.pi * omega**2 / delta**2
        b = [phi_basis(d.ledger.phi_s(j)) for j in (0, 1)]
        led_dphi = d.ledger.phi_m(0) - d.ledger.phi_m(1)
        for (p, q), ref, label in zip(((0, 0), (0, 1)), geometric_phase(omega, delta, led_dphi),
                                      ("phase_same", "phase_opposite")):
            st = QuantumState.from_qubits(np.kron(b[0][:, p], b[1][:, q]), reg.shape, 0)
            amp = np.vdot(st.amplitudes, u @ st.amplitudes)
            num = float(np.angle(amp))
            err = abs(wrap_phase(num - ref + math.pi) - math.pi) / scale
            worst = max(worst, err)
            result.points.append(Row(label, num, 0.0, 0, "numeric", repr(float(dphi))))
            result.points.append(Row(label, wrap_phase(ref), 0.0, 0, "analytic", repr(float(dphi))))
            result.points.append(Row("return_probability", float(abs(amp) ** 2), 0.0, 0, label, repr(float(dphi))))
    result.summary.append(Row("max_relative_error", worst))


_RUNNERS = {
    "bell": _run_bell,
    "parity-scan": _run_parity_scan,
    "chsh": _run_chsh,
    "qls-compare": _run_qls_compare,
    "swap-ramsey": _run_swap_ramsey,
    "calibrate-g": _run_calibrate_g,
    "gate-sweep": _run_gate_sweep,
}


def run(cfg: ExperimentConfig) -> ResultSet:
    """Run the configured experiment; writes ``cfg.out`` when set."""
    result = ResultSet(cfg.experiment, config_hash(cfg), cfg.seed)
    try:
        _RUNNERS[cfg.experiment](cfg, result)
    except CutoffTooSmallError as exc:
        raise ConfigError(f"{cfg.experiment}: Fock cutoff too small ({exc})") from exc
    if cfg.out:
        result.write(cfg.out)
    return result


# ---------------------------------------------------------------------------
# command line


def _kv(text: str) -> tuple[str, str]:
    if "=" not in text:
        raise argparse.ArgumentTypeError(f"expected key=value, got {text!r}")
    k, v = text.split("=", 1)
    return k.strip(), v.strip()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ionlogic", description="Mixed-species ion register experiments.")
    parser.add_argument("--version", action="version", version=f"ionlogic {__version__}")
    sub = parser.add_subparsers(dest="experiment", required=True, metavar="EXPERIMENT")
    for name in EXPERIMENTS:
        p = sub.add_parser(name, help=f"run the {name} experiment")
        p.add_argument("--config", help="flat key = value config file")
        p.add_argument("--seed", type=int, help="master seed (unsigned 64-bit)")
        p.add_argument("--shots", type=int, help="shots per measured point")
        p.add_argument("--out", help="CSV output path")
        p.add_argument("--threads", type=int, help="worker threads (default: IONLOGIC_THREADS or 1)")
        p.add_argument("--set", dest="overrides", action="append", type=_kv, default=[], metavar="KEY=VALUE",
                       help="override a config key; repeatable")
        p.add_argument("--dump-config", action="store_true", help="print the resolved config and exit")
    return parser


def resolve_config(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    pairs = [("experiment", args.experiment)]
    for flag in ("seed", "shots", "threads", "out"):
        value = getattr(args, flag)
        if value is not None:
            pairs.append((flag, str(value)))
    return apply_overrides(cfg, pairs + list(args.overrides))


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.dump_config:
        sys.stdout.write(serialize_config(cfg))
        return EXIT_OK
    try:
        result = run(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - reported as a runtime failure
        log.debug("run failed", exc_info=True)
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    sys.stdout.write(summarize(result))
    if cfg.out:
        print(f"wrote {cfg.out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
