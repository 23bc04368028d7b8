"""SER versus number of propagation paths at 15 dB on the 7 x 12 grid."""

from _common import RESULTS, base_parser, detectors_and_params, write

from otfs_bpicnet.bench import SweepSpec, run_ser_sweep


def main():
    p = base_parser(__doc__)
    p.add_argument("--paths", default="2,4,6,8,10,12,14")
    p.add_argument("--snr-db", type=float, default=15.0)
    ns = p.parse_args()
    dets, params = detectors_and_params(ns)
    spec = SweepSpec("paths", values=[int(v) for v in ns.paths.split(",")], frames=ns.frames,
                     detectors=dets, seed=ns.seed, params=params, snr_db=ns.snr_db)
    write(run_ser_sweep(spec), ns.out or RESULTS / "ser_vs_paths.csv")


if __name__ == "__main__":
    main()
