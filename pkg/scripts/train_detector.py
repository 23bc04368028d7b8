"""Train the per-layer parameters on the default 7 x 12 grid.

``--scale desk`` runs the short schedule used by the acceptance gate
(50 x 10 x 64 at lr 1e-2, a few minutes on CPU). ``--scale full`` runs
500 epochs of 40 batches of 256 at lr 1e-4.
"""

import argparse
import json
import logging
from pathlib import Path

from _common import RESULTS

from otfs_bpicnet.core import SystemConfig
from otfs_bpicnet.trainer import TrainConfig, save_params, train, write_log_csv

SCALES = {
    "desk": TrainConfig(epochs=50, batches_per_epoch=10, batch_size=64, lr=1e-2, val_size=1000),
    "full": TrainConfig(),
}


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--scale", choices=SCALES, default="desk")
    p.add_argument("--out", type=Path, default=RESULTS / "params.json")
    ns = p.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    cfg, tc = SystemConfig(), SCALES[ns.scale]
    res = train(cfg, tc)
    ns.out.parent.mkdir(parents=True, exist_ok=True)
    meta = {"scale": ns.scale, "config_digest": tc.digest(cfg), "best_epoch": res.best_epoch,
            "init_val_loss": res.init_val_loss}
    save_params(res.params, ns.out, metadata=meta)
    write_log_csv(ns.out.with_suffix(".log.csv"), res.log)
    print(json.dumps(meta))


if __name__ == "__main__":
    main()
