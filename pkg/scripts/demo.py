"""Run the full command-line pipeline on the demo scenario.

    python3 scripts/demo.py --out results/demo
"""

import argparse
import sys
from pathlib import Path

from pgmarkov.cli import main as cli


def main():
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--out", type=Path, default=Path("results/demo"))
    p.add_argument("--m-imputations", type=int, default=200)
    p.add_argument("--iterations", type=int, default=3000)
    p.add_argument("--burn-in", type=int, default=1000)
    p.add_argument("--seed", type=int, default=2018)
    args = p.parse_args()

    out = args.out
    cfg = str(out / "config.yaml")
    fit = out / "out" / "fit"
    steps = [
        ["simulate", "--out", str(out), "--seed", str(args.seed)],
        ["validate", "--config", cfg],
        ["impute", "--config", cfg, "--m-imputations", str(args.m_imputations)],
        ["-v", "fit", "--config", cfg, "--imputations", str(out / "out" / "imputations"),
         "--iterations", str(args.iterations), "--burn-in", str(args.burn_in), "--chains", "2"],
        ["summarize", "--chain", str(fit / "chain"), "--truth", str(out / "truth.json")],
        ["gof", "--config", cfg, "--chain", str(fit / "chain")],
    ]
    for step in steps:
        print("$ pgmarkov " + " ".join(step))
        code = cli(step)
        if code:
            sys.exit(code)


if __name__ == "__main__":
    main()
