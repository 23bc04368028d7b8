"""Shared helpers for the experiment scripts."""

import argparse
from pathlib import Path

from otfs_bpicnet.core import SystemConfig
from otfs_bpicnet.trainer import load_params

RESULTS = Path(__file__).resolve().parent.parent / "results"


def base_parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--params", help="trained parameter JSON (omit to skip the trained detector)")
    p.add_argument("--frames", type=int, default=2000, help="frames per sweep point")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, help="CSV output path")
    return p


def detectors_and_params(ns, extra=()):
    dets = ["mmse", "bpic", *extra]
    params = None
    if ns.params:
        params = load_params(ns.params, T=SystemConfig().T)
        dets.append("bpicnet")
    return dets, params


def write(result, path: Path):
    path.parent.mkdir(parents=True, exist_ok=True)
    result.write_csv(path)
    print(result.to_csv(), end="")
    print(f"wrote {path}")
