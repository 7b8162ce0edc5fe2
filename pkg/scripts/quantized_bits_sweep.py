"""Quantization bit-depth sweep: empirical NMSE vs prediction per depth.

Sweeps the measurement quantizer from 1 bit upward at a fixed sampling
ratio and noise level, with the unquantized run as the reference line,
and writes a plot-ready CSV.
"""

import argparse
import csv
import os

import numpy as np

from stmp.harness import ExperimentConfig, run_experiment, se_prediction
from stmp.priors import prior_from_dict, second_moment


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--n", type=int, default=8192)
    parser.add_argument("--ratio", type=float, default=0.8)
    parser.add_argument("--noise-std", type=float, default=0.5)
    parser.add_argument("--bits", default="1,2,3,4,6")
    parser.add_argument("--seeds", type=int, default=10)
    parser.add_argument("--output", default="out/bits_sweep")
    args = parser.parse_args()

    bits = [int(b) for b in args.bits.split(",")]
    base = dict(
        prior={"kind": "gmm", "weights": [0.95, 0.05], "means": [0.0, 0.0], "variances": [0.01, 5.0]},
        operator={"kind": "dct", "n_cols": args.n},
        sampling_ratio=args.ratio,
        noise_std=args.noise_std,
        seeds=list(range(args.seeds)),
        max_iters=80,
        rel_change_tol=1e-4,
    )
    sm = second_moment(prior_from_dict(base["prior"]))

    quantized = ExperimentConfig(
        algorithm="qstmp",
        quantizer={"bits": bits[0]},
        sweep={"param": "bits", "values": bits},
        **base,
    )
    result = run_experiment(quantized)

    unquantized = ExperimentConfig(algorithm="stmp", **base)
    ref = run_experiment(unquantized)
    ref_db = 10 * np.log10(ref["groups"][0]["aggregate"]["mean_nmse"])
    ref_se = se_prediction(unquantized)
    ref_se_db = 10 * np.log10(ref_se.fixed_point["mse"] / sm)

    os.makedirs(args.output, exist_ok=True)
    path = os.path.join(args.output, "bits_sweep.csv")
    print(f"{'bits':>5} {'empirical dB':>13} {'predicted dB':>13}")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bits", "nmse_db", "se_nmse_db"])
        for group in result["groups"]:
            emp_db = 10 * np.log10(group["aggregate"]["mean_nmse"])
            se_db = 10 * np.log10(group["se"].fixed_point["mse"] / sm)
            print(f"{group['sweep_value']:>5} {emp_db:>13.2f} {se_db:>13.2f}")
            writer.writerow([group["sweep_value"], emp_db, se_db])
        writer.writerow(["unquantized", ref_db, ref_se_db])
    print(f"{'unq':>5} {ref_db:>13.2f} {ref_se_db:>13.2f}")
    print(f"wrote {path}")


if __name__ == "__main__":
    main()
