"""SER versus number of subcarriers L (max delay index L-1), P=14, 15 dB."""

from _common import RESULTS, base_parser, detectors_and_params, write

from otfs_bpicnet.bench import SweepSpec, run_ser_sweep


def main():
    p = base_parser(__doc__)
    p.add_argument("--L", default="4,6,8,10,12,14,16")
    ns = p.parse_args()
    dets, params = detectors_and_params(ns)
    spec = SweepSpec("grid_size", values=[int(v) for v in ns.L.split(",")], frames=ns.frames,
                     detectors=dets, seed=ns.seed, params=params, P=14, snr_db=15.0)
    write(run_ser_sweep(spec), ns.out or RESULTS / "ser_vs_grid_size.csv")


if __name__ == "__main__":
    main()
