"""Per-layer SER of classical and trained BPIC at P=14, 15 dB."""

from _common import RESULTS, base_parser, detectors_and_params, write

from otfs_bpicnet.bench import SweepSpec, run_ser_sweep


def main():
    ns = base_parser(__doc__).parse_args()
    dets, params = detectors_and_params(ns)
    spec = SweepSpec("layers", values=list(range(0, 11)), frames=ns.frames, detectors=dets,
                     seed=ns.seed, params=params, P=14, snr_db=15.0)
    write(run_ser_sweep(spec), ns.out or RESULTS / "ser_vs_layers.csv")


if __name__ == "__main__":
    main()
