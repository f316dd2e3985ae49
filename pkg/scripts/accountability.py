"""Over-threshold double signing: who gets blamed and for how much stake."""

import argparse

from posc.harness import run_scenario
from posc.scenario import accountability_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=50)
    args = ap.parse_args()

    failures = 0
    print(f"{'seed':>4} {'T':>3} {'need':>5} {'blamed':>6} {'culprits'}")
    for seed in range(args.seeds):
        cfg = accountability_scenario(seed)
        v = run_scenario(cfg).verdicts["accountability"]
        failures += not (v["pass"] and v["divergent"])
        rep = v.get("report", {})
        need = (1 - 2 * cfg.rho) * cfg.total
        print(f"{seed:>4} {cfg.total:>3} {str(need):>5} {rep.get('stake_weight', '-'):>6} "
              f"{','.join(rep.get('culprits', [])) or 'none'}")
    print(f"{failures} of {args.seeds} runs without a valid guilt report")


if __name__ == "__main__":
    main()
