"""Full benchmark campaign, comparison against the published table and plot CSVs.

Equivalent to::

    tvdmpc run --config configs/paper-section5.json --out OUT
    tvdmpc compare OUT/report.json --out OUT
    tvdmpc report OUT/report.json
"""
import argparse
import sys
from pathlib import Path

from tvdmpc.cli import main

ROOT = Path(__file__).resolve().parents[1]


def run():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--config", default=str(ROOT / "configs" / "paper-section5.json"))
    ap.add_argument("--out", default=str(ROOT / "runs" / "paper-section5"))
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--seed", type=int)
    ap.add_argument("--skip-run", action="store_true", help="reuse an existing report.json")
    args = ap.parse_args()
    out = Path(args.out)
    if not args.skip_run:
        argv = ["-v", "run", "--config", args.config, "--out", str(out), "--threads", str(args.threads)]
        if args.seed is not None:
            argv += ["--seed", str(args.seed)]
        code = main(argv)
        if code:
            return code
    verdict = main(["compare", str(out / "report.json"), "--out", str(out)])
    code = main(["report", str(out / "report.json")])
    return verdict or code


if __name__ == "__main__":
    sys.exit(run())
