"""Bare versus compiled message complexity across validator counts."""

import argparse
import json

from posc.harness import measure_complexity, run_scenario
from posc.scenario import PERMISSIONED, complexity_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--n", type=int, nargs="+", default=[4, 7, 10, 13])
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--every", type=int, default=3, help="slots between injected transactions")
    ap.add_argument("--json", help="write the full report here")
    args = ap.parse_args()

    pairs = {}
    for n in args.n:
        bare = run_scenario(complexity_scenario(0, n=n, mode=PERMISSIONED, epochs=args.epochs, every=args.every))
        compiled = run_scenario(complexity_scenario(0, n=n, epochs=args.epochs, every=args.every))
        pairs[n] = (bare.trace, compiled.trace)
    rep = measure_complexity(pairs)
    print(f"fitted c*n^2: average c={rep['c_average']:.1f}, peak c={rep['c_peak']:.1f}")
    print(f"{'n':>3} {'AC':>12} {'AC_compiled':>12} {'ratio':>7} {'PC':>10} {'PC_compiled':>12} {'ratio':>7}")
    for n in rep["n"]:
        r = rep["rows"][n]
        ac_c, pc_c = r["AC'"], r["PC'"]
        print(f"{n:>3} {r['AC']:>12.0f} {ac_c:>12.0f} {r['ratio_AC']:>7.3f} "
              f"{r['PC']:>10} {pc_c:>12} {r['ratio_PC']:>7.3f}")
    print(f"ratio spread: AC {rep['spread_AC']:.3f}, PC {rep['spread_PC']:.3f}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rep, fh, indent=1, default=str)


if __name__ == "__main__":
    main()
