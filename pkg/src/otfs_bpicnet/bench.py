"""Monte-Carlo SER sweeps and the per-detector complexity calculator."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .channel import ChannelRealization, frame_rng, simulate_frame, stack_frames
from .core import SystemConfig, make_constellation, nearest_labels
from .detector import (
    ML_MAX_CANDIDATES,
    ML_MAX_SYMBOLS,
    DetectorParams,
    GramStats,
    detect,
    hard_labels,
    initial_state,
    ml_oracle_labels,
)
from .errors import CapacityError, ConfigError, InputError

SWEEP_KINDS = ("paths", "grid_size", "layers", "snr")
DETECTORS = ("mmse", "bpic", "bpicnet", "ml_oracle")
CSV_FIELDS = ("sweep_value", "detector", "frames", "symbols", "errors", "ser", "ci95")

# layer counts used for the numerical example in the comparison table
TABLE_LAYERS = {"mp": 9, "uamp": 9, "bpic": 8, "bpicnet": 9, "ep": 5}


def complexity_estimate(detector_name: str, K: int, L: int, M: int, P: int, T: int) -> int:
    """Leading-order multiplication count with unit constants."""
    n = K * L
    formulas = {
        "mp": lambda: n**2 * P * M * T,
        "uamp": lambda: n**3 + n**2 * T,
        "bpic": lambda: n**3 + n**2 * T,
        "bpicnet": lambda: n**3 + n + n**2 * T,
        "ep": lambda: n**3 * T,
    }
    try:
        return int(formulas[detector_name.lower()]())
    except KeyError:
        raise InputError(f"unknown detector {detector_name!r}; choose from {sorted(formulas)}") from None


def complexity_table(K: int, L: int, M: int, P: int, T: int | None = None) -> list[dict]:
    """One row per detector. ``T=None`` uses each detector's tabulated layer count."""
    rows = []
    for name, t_default in TABLE_LAYERS.items():
        t = t_default if T is None else T
        rows.append(
            dict(detector=name, K=K, L=L, M=M, P=P, T=t,
                 multiplications=complexity_estimate(name, K, L, M, P, t))
        )
    return rows


def write_complexity_csv(rows, fh) -> None:
    w = csv.writer(fh, lineterminator="\n")
    w.writerow(["detector", "K", "L", "M", "P", "T", "multiplications"])
    for r in rows:
        w.writerow([r["detector"], r["K"], r["L"], r["M"], r["P"], r["T"], r["multiplications"]])


# ---------------------------------------------------------------------------
# SER sweeps
# ---------------------------------------------------------------------------


@dataclass
class SweepSpec:
    """One experiment: a sweep axis, the fixed point, Monte-Carlo size and detectors.

    ``P`` and ``snr_db`` are the fixed path count and SNR for axes that do not
    vary them. ``channel="identity"`` replaces random channels by ``H = I``.
    """

    sweep_kind: str
    fixed: SystemConfig = field(default_factory=SystemConfig)
    values: list = field(default_factory=list)
    frames: int = 1000
    detectors: list = field(default_factory=lambda: ["mmse", "bpic", "bpicnet"])
    seed: int = 0
    params: DetectorParams | None = None
    P: int = 14
    snr_db: float = 15.0
    channel: str = "random"
    chunk: int = 250

    def __post_init__(self):
        if self.sweep_kind not in SWEEP_KINDS:
            raise ConfigError(f"sweep_kind must be one of {SWEEP_KINDS}")
        if self.frames < 1:
            raise ConfigError("frames must be >= 1")
        if not self.values:
            raise ConfigError("sweep needs at least one value")
        unknown = set(self.detectors) - set(DETECTORS)
        if unknown:
            raise ConfigError(f"unknown detectors {sorted(unknown)}")
        if self.channel not in ("random", "identity"):
            raise ConfigError("channel must be 'random' or 'identity'")
        if "bpicnet" in self.detectors and self.params is None:
            raise ConfigError("bpicnet requires trained parameters")
        if self.sweep_kind == "layers":
            top = max(self.values)
            for name in set(self.detectors) & {"bpic", "bpicnet"}:
                T = self.params.T if name == "bpicnet" else self.fixed.T
                if top > T or min(self.values) < 0:
                    raise ConfigError(f"layer values must lie in [0, {T}] for {name}")

    def point_config(self, value) -> tuple[SystemConfig, int, float]:
        cfg, P, snr = self.fixed, self.P, self.snr_db
        if self.sweep_kind == "paths":
            P = int(value)
        elif self.sweep_kind == "grid_size":
            cfg = cfg.with_(L=int(value), l_max=int(value) - 1)
        elif self.sweep_kind == "snr":
            snr = float(value)
        return cfg, P, snr


@dataclass
class SerRow:
    sweep_value: float
    detector: str
    frames: int
    symbols: int
    errors: int

    @property
    def ser(self) -> float:
        return self.errors / self.symbols

    @property
    def ci95(self) -> float:
        s = self.ser
        return 1.96 * math.sqrt(s * (1 - s) / self.symbols)


@dataclass
class SerResult:
    spec: SweepSpec
    rows: list = field(default_factory=list)

    def get(self, detector, sweep_value) -> SerRow:
        for r in self.rows:
            if r.detector == detector and r.sweep_value == sweep_value:
                return r
        raise KeyError((detector, sweep_value))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in self.rows:
            w.writerow([r.sweep_value, r.detector, r.frames, r.symbols, r.errors,
                        f"{r.ser:.10g}", f"{r.ci95:.10g}"])
        return buf.getvalue()

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(self.to_csv())


def _check_oracle(cfg: SystemConfig):
    if cfg.KL > ML_MAX_SYMBOLS or cfg.mod_order**cfg.KL > ML_MAX_CANDIDATES:
        raise CapacityError(
            f"ml_oracle infeasible for KL={cfg.KL}, M={cfg.mod_order} "
            f"(limit {ML_MAX_SYMBOLS} symbols, {ML_MAX_CANDIDATES} candidates)"
        )


def _frames(spec: SweepSpec, point: int, cfg, P, snr, start, stop, c):
    identity = ChannelRealization.single_path() if spec.channel == "identity" else None
    return [
        simulate_frame(cfg, P, snr, frame_rng(spec.seed, point, f), c, realization=identity)
        for f in range(start, stop)
    ]


def run_ser_sweep(spec: SweepSpec, progress=None) -> SerResult:
    """Paired Monte-Carlo SER: every detector sees the same frames at each point.

    Frame ``f`` of sweep point ``i`` is generated from ``frame_rng(seed, i, f)``,
    so results do not depend on chunking.
    """
    points = [spec.values] if spec.sweep_kind == "layers" else [[v] for v in spec.values]
    result = SerResult(spec)
    for i, vals in enumerate(points):
        cfg, P, snr = spec.point_config(vals[0])
        if "ml_oracle" in spec.detectors:
            _check_oracle(cfg)
        c = make_constellation(cfg.mod_order)
        keys = [(d, v) for d in spec.detectors for v in vals]
        errors = dict.fromkeys(keys, 0)
        for start in range(0, spec.frames, spec.chunk):
            stop = min(start + spec.chunk, spec.frames)
            frames = _frames(spec, i, cfg, P, snr, start, stop, c)
            m = stack_frames(frames)
            truth = nearest_labels(np.stack([f.x for f in frames]), c)
            for d, layer_labels in _run_detectors(spec, m, cfg, c).items():
                for v in vals:
                    lab = layer_labels(v)
                    errors[(d, v)] += int(np.count_nonzero(lab != truth))
            if progress is not None:
                progress(i, stop)
        symbols = spec.frames * cfg.KL
        for d, v in keys:
            result.rows.append(SerRow(v, d, spec.frames, symbols, errors[(d, v)]))
    return result


def _run_detectors(spec: SweepSpec, m, cfg, c) -> dict:
    """Map detector name -> function(layer value) -> decided labels."""
    out = {}
    st = GramStats.from_model(m)
    need_init = {"mmse", "bpic", "bpicnet"} & set(spec.detectors)
    if need_init:
        init = hard_labels(initial_state(st).x_hat, c)
    for d in spec.detectors:
        if d == "mmse":
            out[d] = lambda v, lab=init: lab
        elif d == "ml_oracle":
            lab = ml_oracle_labels(m, c)
            out[d] = lambda v, lab=lab: lab
        else:
            params = spec.params if d == "bpicnet" else DetectorParams.ones(cfg.T)
            _, trace = detect(st, params, c.real_alphabet)
            if spec.sweep_kind == "layers":
                labs = {t: hard_labels(trace[t].x_hat, c) for t in spec.values}
                out[d] = lambda v, labs=labs: labs[v]
            else:
                lab = hard_labels(trace[-1].x_hat, c)
                out[d] = lambda v, lab=lab: lab
    return out
