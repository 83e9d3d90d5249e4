"""Newton robustness on a grid of starting points, with and without line search.

    python3 scripts/run_robustness.py --out results/robustness.csv
"""

import sys
from pathlib import Path

from homfit.cli import main

if __name__ == "__main__":
    args = sys.argv[1:]
    out = Path(args[args.index("--out") + 1]) if "--out" in args else Path("robustness.csv")
    rest = [a for i, a in enumerate(args) if a != "--out" and (i == 0 or args[i - 1] != "--out")]
    status = main(["experiment-robustness", "--out", str(out)] + rest)
    fixed = out.with_name(out.stem + "_fixed_step" + out.suffix)
    status = max(status, main(["experiment-robustness", "--fixed-step", "--out", str(fixed)] + rest))
    sys.exit(status)
