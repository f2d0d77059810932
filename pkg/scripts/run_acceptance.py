"""Run every validation suite and print one JSON line per suite.

    python3 scripts/run_acceptance.py [--seed N] [--suite NAME]

Exit status is 0 when every suite passes and 2 otherwise.
"""

import argparse
import json
import sys

from lbp.validate import SUITES, run_suites


def main() -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--suite", default="all", choices=["all", *SUITES])
    args = p.parse_args()
    ok = True
    for res in run_suites(args.suite, args.seed):
        d = res.as_dict()
        print(json.dumps(d, default=str))
        print(f"{d['suite']:12s} {'PASS' if d['passed'] else 'FAIL'} {d['seconds']:8.2f}s", file=sys.stderr)
        ok &= res.passed
    return 0 if ok else 2


if __name__ == "__main__":
    sys.exit(main())
