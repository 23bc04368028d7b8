"""Command-line entry point: ``otfs-bpicnet {simulate,train,ser-sweep,complexity}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import bench
from .channel import frame_rng, simulate_frame, stack_frames
from .core import SystemConfig, make_constellation, nearest_labels
from .detector import DetectorParams, detect, hard_labels, initial_state
from .errors import CapacityError, ConfigError, FormatError, InputError, NumericalError, TrainingError
from .trainer import TrainConfig, load_params, save_params, train, write_log_csv

USER_ERRORS = (ConfigError, InputError, NumericalError, CapacityError, FormatError, TrainingError, OSError)


def _positive_int(text: str) -> int:
    val = int(text)
    if val < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {val}")
    return val


def _number_list(text: str) -> list:
    try:
        vals = [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return [int(v) if v.is_integer() else v for v in vals]


def _system_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("system")
    g.add_argument("--K", type=_positive_int, default=7, help="Doppler bins (subframes)")
    g.add_argument("--L", type=_positive_int, default=12, help="delay bins (subcarriers)")
    g.add_argument("--delta-f", type=float, default=15e3, help="subcarrier spacing in Hz")
    g.add_argument("--fc", type=float, default=10e9, help="carrier frequency in Hz")
    g.add_argument("--l-max", type=int, default=None, help="max delay index (default L-1)")
    g.add_argument("--k-max", type=int, default=None, help="max Doppler index (default min(3, K//2))")
    g.add_argument("--mod-order", type=int, default=4, choices=(4, 16, 64))
    g.add_argument("--T", type=_positive_int, default=10, help="detector layers")
    g.add_argument("--seed", type=int, default=0)


def _system(ns) -> SystemConfig:
    return SystemConfig(
        K=ns.K, L=ns.L, delta_f=ns.delta_f, f_c=ns.fc,
        k_max=min(3, ns.K // 2) if ns.k_max is None else ns.k_max,
        l_max=ns.L - 1 if ns.l_max is None else ns.l_max,
        mod_order=ns.mod_order, T=ns.T,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="otfs-bpicnet", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="detect one frame and print the decisions")
    _system_args(p)
    p.add_argument("--paths", type=_positive_int, default=14)
    p.add_argument("--snr-db", type=float, default=15.0)
    p.add_argument("--params", help="trained parameter file (default: all ones)")

    p = sub.add_parser("train", help="train the per-layer parameters")
    _system_args(p)
    p.add_argument("--epochs", type=_positive_int, default=500)
    p.add_argument("--batches", type=_positive_int, default=40, help="batches per epoch")
    p.add_argument("--batch-size", type=_positive_int, default=256)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--val-size", type=_positive_int, default=5000)
    p.add_argument("--paths-range", type=_positive_int, nargs=2, default=(6, 14), metavar=("PMIN", "PMAX"))
    p.add_argument("--snr-range", type=float, nargs=2, default=(10.0, 20.0), metavar=("LO", "HI"))
    p.add_argument("--out", required=True, help="parameter JSON to write")
    p.add_argument("--log", help="per-epoch CSV log to write")

    p = sub.add_parser("ser-sweep", help="Monte-Carlo SER over one swept quantity")
    _system_args(p)
    p.add_argument("--sweep", choices=bench.SWEEP_KINDS, required=True)
    p.add_argument("--values", type=_number_list, required=True, help="comma-separated sweep values")
    p.add_argument("--detectors", default="mmse,bpic,bpicnet",
                   help=f"comma-separated subset of {','.join(bench.DETECTORS)}")
    p.add_argument("--frames", type=_positive_int, default=1000, help="frames per sweep point")
    p.add_argument("--paths", type=_positive_int, default=14)
    p.add_argument("--snr-db", type=float, default=15.0)
    p.add_argument("--params", help="trained parameter file (needed for bpicnet)")
    p.add_argument("--identity-channel", action="store_true", help="use H = I instead of random channels")
    p.add_argument("--out", help="CSV path (default: stdout)")

    p = sub.add_parser("complexity", help="leading-order multiplication counts")
    p.add_argument("--K", type=_positive_int, default=7)
    p.add_argument("--L", type=_positive_int, default=12)
    p.add_argument("--mod-order", type=_positive_int, default=4)
    p.add_argument("--paths", type=_positive_int, default=14)
    p.add_argument("--T", type=_positive_int, default=None, help="layers (default: per-detector table values)")
    p.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def _cmd_simulate(ns) -> None:
    cfg = _system(ns)
    c = make_constellation(cfg.mod_order)
    params = load_params(ns.params, T=cfg.T) if ns.params else DetectorParams.ones(cfg.T)
    f = simulate_frame(cfg, ns.paths, ns.snr_db, frame_rng(ns.seed), c)
    m = stack_frames([f])
    truth = nearest_labels(f.x, c)
    x_hat, _ = detect(m, params, c.real_alphabet)
    est = hard_labels(x_hat[0], c)
    mmse = hard_labels(initial_state(m).x_hat[0], c)
    print(f"paths={f.realization.P} snr_db={ns.snr_db} sigma2={f.sigma2:.6g} symbols={cfg.KL}")
    print("true   ", " ".join(map(str, truth)))
    print("mmse   ", " ".join(map(str, mmse)), f"(errors {int(np.sum(mmse != truth))})")
    print("bpicnet", " ".join(map(str, est)), f"(errors {int(np.sum(est != truth))})")


def _cmd_train(ns) -> None:
    cfg = _system(ns)
    tc = TrainConfig(
        epochs=ns.epochs, batches_per_epoch=ns.batches, batch_size=ns.batch_size, lr=ns.lr,
        p_range=tuple(ns.paths_range), snr_range_db=tuple(ns.snr_range), val_size=ns.val_size,
        seed=ns.seed,
    )

    def report(rec):
        print(f"epoch {rec.epoch:4d}  train {rec.train_loss:.6f}  val {rec.val_loss:.6f}  lr {rec.lr:.2e}",
              file=sys.stderr)

    res = train(cfg, tc, progress=report)
    meta = {"config_digest": tc.digest(cfg), "best_epoch": res.best_epoch,
            "init_val_loss": res.init_val_loss,
            "best_val_loss": min([res.init_val_loss] + [r.val_loss for r in res.log])}
    save_params(res.params, ns.out, metadata=meta)
    if ns.log:
        write_log_csv(ns.log, res.log)
    print(json.dumps(meta))


def _cmd_sweep(ns) -> None:
    cfg = _system(ns)
    detectors = [d.strip() for d in ns.detectors.split(",") if d.strip()]
    params = load_params(ns.params) if ns.params else None
    spec = bench.SweepSpec(
        sweep_kind=ns.sweep, fixed=cfg, values=ns.values, frames=ns.frames, detectors=detectors,
        seed=ns.seed, params=params, P=ns.paths, snr_db=ns.snr_db,
        channel="identity" if ns.identity_channel else "random",
    )
    csv_text = bench.run_ser_sweep(spec).to_csv()
    _emit(csv_text, ns.out)


def _cmd_complexity(ns) -> None:
    import io

    buf = io.StringIO()
    bench.write_complexity_csv(bench.complexity_table(ns.K, ns.L, ns.mod_order, ns.paths, ns.T), buf)
    _emit(buf.getvalue(), ns.out)


def _emit(text: str, path) -> None:
    if path:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


COMMANDS = {"simulate": _cmd_simulate, "train": _cmd_train, "ser-sweep": _cmd_sweep, "complexity": _cmd_complexity}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(message)s")
    try:
        COMMANDS[ns.command](ns)
    except USER_ERRORS as exc:
        print(f"otfs-bpicnet: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
