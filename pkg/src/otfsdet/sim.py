"""Reproducible Monte-Carlo harness for the detector family.

The unit of work is a trial: one frame of bits, one channel draw, one noise
draw, and every configured detector run on that identical realization.
Trials are seeded from (master_seed, sweep point, trial index) and
aggregated in trial-index order in fixed-size batches, so the output is
byte-identical no matter how many worker threads execute the trials.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .bidirectional import detect_iw, detect_turbo
from .channel import (
    ChannelGenParams,
    apply_channel_awgn,
    build_dd_channel,
    build_time_channel,
    coupling_matrix,
    draw_channel,
    snr_to_gamma,
)
from .errors import ConfigError, DimensionMismatchError
from .frames import (
    OtfsFrameConfig,
    bits_from_indices,
    demodulate,
    map_bits,
    modulate,
    random_bits,
    symbols_to_bits,
)
from .uamp import (
    DEFAULT_N_ITER,
    DEFAULT_RHO_TH,
    PriorTable,
    detect_amp,
    detect_lmmse,
    detect_uamp,
    detect_uamp_mfic,
    unitary_transform,
)

DETECTOR_NAMES = ("lmmse", "amp", "uamp", "uamp-mfic", "turbo-mfic", "iw-mfic")
_SVD_DETECTORS = frozenset({"uamp", "uamp-mfic", "turbo-mfic", "iw-mfic"})

TRIAL_BATCH = 16        # trials aggregated between stop-rule checks
_SEED_OFFSET = 1 << 40  # keeps derived seed words positive for negative SNRs

CSV_HEADER = ("detector", "snr_db", "velocity_mps", "frames", "bits",
              "bit_errors", "frame_errors", "ber", "mean_iters")
ITER_CSV_HEADER = ("detector", "snr_db", "velocity_mps", "iteration",
                   "frames", "bits", "bit_errors", "ber")


@dataclass(frozen=True)
class DetectorConfig:
    """One detector entry of a simulation: identifier plus its options."""

    name: str
    order: str = "forward"
    n_inner: int = 1
    label: Optional[str] = None

    def __post_init__(self):
        if self.name not in DETECTOR_NAMES:
            raise ConfigError(
                f"unknown detector {self.name!r}; choose from {DETECTOR_NAMES}")
        if int(self.n_inner) != self.n_inner or self.n_inner < 1:
            raise ConfigError(f"n_inner must be a positive integer, got {self.n_inner}")

    @property
    def key(self) -> str:
        """Column label in results; defaults to the detector name."""
        return self.label if self.label is not None else self.name


@dataclass(frozen=True)
class ChannelConfig:
    """Channel draw knobs that are independent of the frame geometry."""

    n_paths: int = 6
    l_max: int = 10
    v_max: float = 138.9

    def __post_init__(self):
        if self.n_paths < 1:
            raise ConfigError(f"n_paths must be >= 1, got {self.n_paths}")
        if self.l_max < self.n_paths - 1:
            raise ConfigError(
                f"l_max {self.l_max} cannot host {self.n_paths} distinct delays")
        if self.v_max < 0:
            raise ConfigError(f"v_max must be >= 0, got {self.v_max}")


def _default_detectors():
    return tuple(DetectorConfig(name=n) for n in DETECTOR_NAMES)


@dataclass(frozen=True)
class SimConfig:
    """Complete description of one Monte-Carlo experiment."""

    frame: OtfsFrameConfig = field(default_factory=OtfsFrameConfig)
    channel: ChannelConfig = field(default_factory=ChannelConfig)
    detectors: tuple = field(default_factory=_default_detectors)
    snr_grid_db: tuple = (12.0,)
    velocity_grid: tuple = (138.9,)
    n_iter: int = DEFAULT_N_ITER
    rho_th: float = DEFAULT_RHO_TH
    min_frames: int = 1
    min_bit_errors: int = 100
    frame_cap: int = 10_000
    master_seed: int = 20260815

    def __post_init__(self):
        object.__setattr__(self, "detectors", tuple(
            DetectorConfig(name=d) if isinstance(d, str) else d
            for d in self.detectors))
        object.__setattr__(self, "snr_grid_db",
                           tuple(float(s) for s in self.snr_grid_db))
        object.__setattr__(self, "velocity_grid",
                           tuple(float(v) for v in self.velocity_grid))
        if not self.detectors:
            raise ConfigError("detectors list is empty")
        if not self.snr_grid_db:
            raise ConfigError("snr_grid_db is empty")
        if not self.velocity_grid:
            raise ConfigError("velocity_grid is empty")
        keys = [d.key for d in self.detectors]
        if len(set(keys)) != len(keys):
            raise ConfigError(f"duplicate detector labels in {keys}")
        if int(self.n_iter) != self.n_iter or self.n_iter < 1:
            raise ConfigError(f"n_iter must be a positive integer, got {self.n_iter}")
        if not 0.0 < self.rho_th < 1.0:
            raise ConfigError(f"rho_th must lie in (0, 1), got {self.rho_th}")
        if self.min_frames < 1:
            raise ConfigError(f"min_frames must be >= 1, got {self.min_frames}")
        if self.min_bit_errors < 0:
            raise ConfigError(f"min_bit_errors must be >= 0, got {self.min_bit_errors}")
        if self.frame_cap < self.min_frames:
            raise ConfigError(
                f"frame_cap {self.frame_cap} is below min_frames {self.min_frames}")
        if not 0 <= int(self.master_seed) < 2 ** 64:
            raise ConfigError(f"master_seed must fit in 64 bits, got {self.master_seed}")


@dataclass
class BerRecord:
    """Aggregated error statistics for one (detector, SNR, velocity) point."""

    detector: str
    snr_db: float
    velocity_mps: float
    frames: int
    bits: int
    bit_errors: int
    frame_errors: int
    ber: float
    mean_iters: float
    censored: bool = False
    failures: int = 0
    theta_mean: tuple = ()


@dataclass
class IterationRecord:
    """BER after each iteration for one detector at one sweep point."""

    detector: str
    snr_db: float
    velocity_mps: float
    iteration: int
    frames: int
    bits: int
    bit_errors: int
    ber: float


@dataclass
class TrialOutcome:
    """What one detector produced on one realization."""

    bit_errors: int
    bits: int
    frame_error: bool
    iterations: int
    theta: Optional[np.ndarray]
    iter_errors: Optional[np.ndarray]
    failed: bool = False


def ber_count(decided, truth):
    """Hamming distance and length of two bit sequences."""
    decided = np.asarray(decided)
    truth = np.asarray(truth)
    if decided.shape != truth.shape:
        raise DimensionMismatchError(
            f"bit sequences differ in shape: {decided.shape} vs {truth.shape}")
    return int(np.count_nonzero(decided != truth)), int(truth.size)


def trial_seed(master_seed: int, snr_db: float, velocity: float,
               trial_index: int) -> np.random.SeedSequence:
    """Deterministic per-trial seed; sweep coordinates enter at 1e-6 resolution."""
    return np.random.SeedSequence([
        int(master_seed),
        int(round(float(snr_db) * 1e6)) + _SEED_OFFSET,
        int(round(float(velocity) * 1e6)) + _SEED_OFFSET,
        int(trial_index),
    ])


def gen_params(cfg: SimConfig, velocity: float) -> ChannelGenParams:
    """Channel generator parameters at one sweep velocity."""
    return ChannelGenParams(
        n_paths=cfg.channel.n_paths,
        l_max=cfg.channel.l_max,
        v_max=float(velocity),
        f_c=cfg.frame.f_c,
        delta_f=cfg.frame.delta_f,
        n_doppler=cfg.frame.N,
    )


def _trace_errors(decision_trace, bits, spec):
    out = np.empty(decision_trace.shape[0], dtype=np.int64)
    for t in range(decision_trace.shape[0]):
        decided = bits_from_indices(decision_trace[t], spec)
        out[t] = np.count_nonzero(decided != bits)
    return out


def _pad_theta(trace, n_iter):
    theta = np.asarray(trace, dtype=np.float64)
    if theta.size < n_iter:
        theta = np.concatenate([theta, np.full(n_iter - theta.size, theta[-1])])
    return theta


def _run_one(det: DetectorConfig, spec, bits, y, a, model, prior, gamma,
             n_iter, rho_th, iteration_trace) -> TrialOutcome:
    if det.name == "lmmse":
        decided = symbols_to_bits(detect_lmmse(a, y, gamma, spec), spec)
        err, total = ber_count(decided, bits)
        iter_errors = np.full(n_iter, err, dtype=np.int64) if iteration_trace else None
        return TrialOutcome(bit_errors=err, bits=total, frame_error=err > 0,
                            iterations=1, theta=None, iter_errors=iter_errors)
    if det.name == "amp":
        rep = detect_amp(a, y, prior, gamma, n_iter=n_iter, rho_th=rho_th)
    elif det.name == "uamp":
        rep = detect_uamp(model, prior, n_iter=n_iter, rho_th=rho_th)
    elif det.name == "uamp-mfic":
        rep = detect_uamp_mfic(model, prior, n_iter=n_iter, order=det.order,
                               rho_th=rho_th)
    elif det.name == "turbo-mfic":
        rep = detect_turbo(model, prior, n_iter=n_iter, n_inner=det.n_inner,
                           rho_th=rho_th)
    else:
        rep = detect_iw(model, prior, n_iter=n_iter, rho_th=rho_th)
    decided = bits_from_indices(rep.indices, spec)
    err, total = ber_count(decided, bits)
    iter_errors = _trace_errors(rep.decision_trace, bits, spec) if iteration_trace else None
    return TrialOutcome(bit_errors=err, bits=total, frame_error=err > 0,
                        iterations=rep.iterations,
                        theta=_pad_theta(rep.theta_trace, n_iter),
                        iter_errors=iter_errors)


def run_trial(cfg: SimConfig, snr_db: float, velocity: float, trial_index: int,
              iteration_trace: bool = False) -> dict:
    """One paired realization: every detector sees identical (bits, H, noise).

    A detector that raises is recorded as a failed outcome for this trial;
    the remaining detectors still run.
    """
    rng = np.random.default_rng(
        trial_seed(cfg.master_seed, snr_db, velocity, trial_index))
    frame = cfg.frame
    spec = frame.constellation_spec()
    bits = random_bits(rng, frame.bits_per_frame)
    x = map_bits(bits, spec)
    chan = draw_channel(gen_params(cfg, velocity), rng)
    h_t = build_time_channel(chan, frame.mn)
    gamma = snr_to_gamma(snr_db)
    y = demodulate(apply_channel_awgn(modulate(x, frame), h_t, gamma, rng), frame)
    dd = build_dd_channel(h_t, frame.M, frame.N)
    a = coupling_matrix(dd)
    prior = PriorTable.uniform(frame.mn, spec)

    model = None
    outcomes = {}
    for det in cfg.detectors:
        try:
            if det.name in _SVD_DETECTORS and model is None:
                model = unitary_transform(dd, y, gamma)
            outcomes[det.key] = _run_one(det, spec, bits, y, a, model, prior,
                                         gamma, cfg.n_iter, cfg.rho_th,
                                         iteration_trace)
        except Exception:
            outcomes[det.key] = TrialOutcome(
                bit_errors=0, bits=0, frame_error=False, iterations=0,
                theta=None, iter_errors=None, failed=True)
    return outcomes


class _PointAccumulator:
    """Ordered reduction of trial outcomes for one detector at one point."""

    def __init__(self, n_iter: int):
        self.bit_errors = 0
        self.bits = 0
        self.frame_errors = 0
        self.failures = 0
        self.frames_ok = 0
        self.iters_sum = 0
        self.theta_sum = np.zeros(n_iter)
        self.theta_frames = 0
        self.iter_errors = np.zeros(n_iter, dtype=np.int64)

    def add(self, out: TrialOutcome):
        if out.failed:
            self.failures += 1
            return
        self.frames_ok += 1
        self.bit_errors += out.bit_errors
        self.bits += out.bits
        self.frame_errors += int(out.frame_error)
        self.iters_sum += out.iterations
        if out.theta is not None:
            self.theta_sum += out.theta
            self.theta_frames += 1
        if out.iter_errors is not None:
            self.iter_errors += out.iter_errors


def resolve_threads(threads=None) -> int:
    """Explicit count, else OTFS_SIM_THREADS, else machine parallelism."""
    if threads is None:
        env = os.environ.get("OTFS_SIM_THREADS")
        if env is not None:
            try:
                threads = int(env)
            except ValueError:
                raise ConfigError(f"OTFS_SIM_THREADS={env!r} is not an integer")
        else:
            return os.cpu_count() or 1
    if int(threads) != threads or threads < 1:
        raise ConfigError(f"thread count must be a positive integer, got {threads}")
    return int(threads)


def _run_point(cfg, snr_db, velocity, executor, iteration_trace, stop_early):
    acc = {det.key: _PointAccumulator(cfg.n_iter) for det in cfg.detectors}
    frames = 0
    while frames < cfg.frame_cap:
        hi = min(frames + TRIAL_BATCH, cfg.frame_cap)
        if stop_early and frames >= cfg.min_frames and all(
                a.bit_errors >= cfg.min_bit_errors for a in acc.values()):
            break
        if not stop_early:
            if frames >= cfg.min_frames:
                break
            hi = min(hi, cfg.min_frames)
        batch = range(frames, hi)
        run = lambda t: run_trial(cfg, snr_db, velocity, t, iteration_trace)
        for out in executor.map(run, batch):
            for key, det_out in out.items():
                acc[key].add(det_out)
        frames = hi
    return frames, acc


def _point_records(cfg, snr_db, velocity, frames, acc):
    records = []
    for det in cfg.detectors:
        a = acc[det.key]
        ber = a.bit_errors / a.bits if a.bits else 0.0
        mean_iters = a.iters_sum / a.frames_ok if a.frames_ok else 0.0
        theta = (tuple(np.round(a.theta_sum / a.theta_frames, 10))
                 if a.theta_frames else ())
        records.append(BerRecord(
            detector=det.key, snr_db=snr_db, velocity_mps=velocity,
            frames=frames, bits=a.bits, bit_errors=a.bit_errors,
            frame_errors=a.frame_errors, ber=ber, mean_iters=mean_iters,
            censored=a.bit_errors < cfg.min_bit_errors, failures=a.failures,
            theta_mean=theta))
    return records


def simulate(cfg: SimConfig, threads=None) -> list:
    """Full grid: every SNR crossed with every velocity."""
    records = []
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        for snr_db in cfg.snr_grid_db:
            for velocity in cfg.velocity_grid:
                frames, acc = _run_point(cfg, snr_db, velocity, pool,
                                         iteration_trace=False, stop_early=True)
                records.extend(_point_records(cfg, snr_db, velocity, frames, acc))
    return records


def sweep_snr(cfg: SimConfig, threads=None) -> list:
    """BER versus SNR at the configured channel velocity."""
    velocity = cfg.channel.v_max
    records = []
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        for snr_db in cfg.snr_grid_db:
            frames, acc = _run_point(cfg, snr_db, velocity, pool,
                                     iteration_trace=False, stop_early=True)
            records.extend(_point_records(cfg, snr_db, velocity, frames, acc))
    return records


def sweep_velocity(cfg: SimConfig, threads=None) -> list:
    """BER versus maximum velocity at the first configured SNR."""
    snr_db = cfg.snr_grid_db[0]
    records = []
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        for velocity in cfg.velocity_grid:
            frames, acc = _run_point(cfg, snr_db, velocity, pool,
                                     iteration_trace=False, stop_early=True)
            records.extend(_point_records(cfg, snr_db, velocity, frames, acc))
    return records


def sweep_iterations(cfg: SimConfig, threads=None) -> list:
    """Iteration-resolved BER at the first SNR and the configured velocity.

    Runs exactly min_frames frames (no error-count stop) so every detector's
    convergence trace averages over the same realizations.
    """
    snr_db = cfg.snr_grid_db[0]
    velocity = cfg.channel.v_max
    with ThreadPoolExecutor(max_workers=resolve_threads(threads)) as pool:
        frames, acc = _run_point(cfg, snr_db, velocity, pool,
                                 iteration_trace=True, stop_early=False)
    records = []
    for det in cfg.detectors:
        a = acc[det.key]
        for t in range(cfg.n_iter):
            err = int(a.iter_errors[t])
            records.append(IterationRecord(
                detector=det.key, snr_db=snr_db, velocity_mps=velocity,
                iteration=t + 1, frames=frames, bits=a.bits, bit_errors=err,
                ber=err / a.bits if a.bits else 0.0))
    return records


def _sidecar_path(path) -> str:
    return os.fspath(path) + ".meta.json"


def _write_sidecar(path, cfg, records):
    meta = {"records": records}
    if cfg is not None:
        meta["config"] = config_to_dict(cfg)
        meta["master_seed"] = cfg.master_seed
    with open(_sidecar_path(path), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_results(records, path, config: Optional[SimConfig] = None):
    """Persist BER records as CSV plus a JSON metadata sidecar."""
    rows = sorted(records, key=lambda r: (r.detector, r.snr_db, r.velocity_mps))
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_HEADER)
            for r in rows:
                writer.writerow([r.detector, f"{r.snr_db:g}", f"{r.velocity_mps:g}",
                                 r.frames, r.bits, r.bit_errors, r.frame_errors,
                                 f"{r.ber:.6e}", f"{r.mean_iters:.4f}"])
        _write_sidecar(path, config, [
            {"detector": r.detector, "snr_db": r.snr_db,
             "velocity_mps": r.velocity_mps, "censored": r.censored,
             "failures": r.failures, "theta_mean": list(r.theta_mean)}
            for r in rows])
    except OSError as exc:
        raise ConfigError(f"cannot write results to {path}: {exc}") from exc


def write_iteration_results(records, path, config: Optional[SimConfig] = None):
    """Persist iteration-resolved BER records as CSV plus metadata sidecar."""
    rows = sorted(records, key=lambda r: (r.detector, r.snr_db, r.velocity_mps,
                                          r.iteration))
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(ITER_CSV_HEADER)
            for r in rows:
                writer.writerow([r.detector, f"{r.snr_db:g}", f"{r.velocity_mps:g}",
                                 r.iteration, r.frames, r.bits, r.bit_errors,
                                 f"{r.ber:.6e}"])
        _write_sidecar(path, config, [])
    except OSError as exc:
        raise ConfigError(f"cannot write results to {path}: {exc}") from exc


def read_results(path) -> list:
    """Parse a CSV produced by write_results back into records."""
    records = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames is None or tuple(reader.fieldnames) != CSV_HEADER:
                raise ConfigError(
                    f"{path} does not carry the expected header {CSV_HEADER}")
            for row in reader:
                records.append(BerRecord(
                    detector=row["detector"], snr_db=float(row["snr_db"]),
                    velocity_mps=float(row["velocity_mps"]),
                    frames=int(row["frames"]), bits=int(row["bits"]),
                    bit_errors=int(row["bit_errors"]),
                    frame_errors=int(row["frame_errors"]), ber=float(row["ber"]),
                    mean_iters=float(row["mean_iters"])))
    except OSError as exc:
        raise ConfigError(f"cannot read results from {path}: {exc}") from exc
    return records


_FRAME_KEYS = ("M", "N", "delta_f", "f_c", "constellation")
_CHANNEL_KEYS = ("n_paths", "l_max", "v_max")
_DETECTOR_KEYS = ("name", "order", "n_inner", "label")
_TOP_KEYS = ("frame", "channel", "detectors", "snr_grid_db", "velocity_grid",
             "n_iter", "rho_th", "min_frames", "min_bit_errors", "frame_cap",
             "master_seed")


def _check_keys(d, allowed, where):
    for key in d:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in {where}; allowed: {allowed}")


def _detector_from_entry(entry):
    if isinstance(entry, str):
        return DetectorConfig(name=entry)
    if isinstance(entry, dict):
        _check_keys(entry, _DETECTOR_KEYS, "detector entry")
        if "name" not in entry:
            raise ConfigError(f"detector entry {entry!r} lacks a name")
        return DetectorConfig(**entry)
    raise ConfigError(f"detector entry must be a name or mapping, got {entry!r}")


def config_from_dict(data: dict) -> SimConfig:
    """Build a validated SimConfig from plain nested dictionaries."""
    if not isinstance(data, dict):
        raise ConfigError(f"config root must be a mapping, got {type(data).__name__}")
    _check_keys(data, _TOP_KEYS, "config")
    kwargs = {}
    if "frame" in data:
        frame = dict(data["frame"])
        _check_keys(frame, _FRAME_KEYS, "frame")
        kwargs["frame"] = OtfsFrameConfig(**frame)
    if "channel" in data:
        chan = dict(data["channel"])
        _check_keys(chan, _CHANNEL_KEYS, "channel")
        kwargs["channel"] = ChannelConfig(**chan)
    if "detectors" in data:
        entries = data["detectors"]
        if isinstance(entries, (str, dict)):
            entries = [entries]
        kwargs["detectors"] = tuple(_detector_from_entry(e) for e in entries)
    for key in ("snr_grid_db", "velocity_grid"):
        if key in data:
            value = data[key]
            if isinstance(value, (int, float)):
                value = [value]
            kwargs[key] = tuple(float(v) for v in value)
    for key in ("n_iter", "min_frames", "min_bit_errors", "frame_cap",
                "master_seed"):
        if key in data:
            kwargs[key] = int(data[key])
    if "rho_th" in data:
        kwargs["rho_th"] = float(data["rho_th"])
    return SimConfig(**kwargs)


def config_to_dict(cfg: SimConfig) -> dict:
    """Inverse of config_from_dict, suitable for JSON serialization."""
    return {
        "frame": {"M": cfg.frame.M, "N": cfg.frame.N,
                  "delta_f": cfg.frame.delta_f, "f_c": cfg.frame.f_c,
                  "constellation": cfg.frame.constellation},
        "channel": {"n_paths": cfg.channel.n_paths, "l_max": cfg.channel.l_max,
                    "v_max": cfg.channel.v_max},
        "detectors": [{"name": d.name, "order": d.order, "n_inner": d.n_inner,
                       "label": d.label} for d in cfg.detectors],
        "snr_grid_db": list(cfg.snr_grid_db),
        "velocity_grid": list(cfg.velocity_grid),
        "n_iter": cfg.n_iter,
        "rho_th": cfg.rho_th,
        "min_frames": cfg.min_frames,
        "min_bit_errors": cfg.min_bit_errors,
        "frame_cap": cfg.frame_cap,
        "master_seed": cfg.master_seed,
    }


def load_config(path) -> SimConfig:
    """Read a JSON config file mirroring the SimConfig field names."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    return config_from_dict(data)


def _parse_override_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        pass
    if "," in text:
        return [_parse_override_value(part) for part in text.split(",")]
    return text


def apply_overrides(cfg: SimConfig, pairs) -> SimConfig:
    """Apply `--set key=value` pairs; dotted keys reach nested sections."""
    data = config_to_dict(cfg)
    for pair in pairs:
        if "=" not in pair:
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        key, text = pair.split("=", 1)
        value = _parse_override_value(text)
        parts = key.split(".")
        target = data
        for part in parts[:-1]:
            if not isinstance(target, dict) or part not in target:
                raise ConfigError(f"unknown config key {key!r}")
            target = target[part]
        leaf = parts[-1]
        if not isinstance(target, dict) or leaf not in target:
            raise ConfigError(f"unknown config key {key!r}")
        target[leaf] = value
    return config_from_dict(data)
