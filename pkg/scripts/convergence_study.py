"""Apparent coefficient versus box size; reports trends, asserts no rate.

    python3 scripts/convergence_study.py --dim 1 --ns 10,100,1000,10000 --m 200
    python3 scripts/convergence_study.py --dim 2 --ns 4,8,16,32 --m 20 --bc dirichlet
"""

import sys

from homfit.cli import main

if __name__ == "__main__":
    sys.exit(main(["convergence-study"] + sys.argv[1:]))
