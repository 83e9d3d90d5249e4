"""Noise propagation study: fit M independent fields against fixed observations.

Writes the per-fit CSV and a histogram CSV next to it, then prints the
relative variances of lambda_opt, k_opt, K*_N(theta0) and S_N(k0).

    python3 scripts/run_noise_experiment.py --out results/noise.csv
"""

import sys

from homfit.cli import main

if __name__ == "__main__":
    sys.exit(main(["experiment-noise"] + sys.argv[1:]))
