"""Worst observed commit latency of bare ref-bft against its advertised bound."""

import argparse
from collections import defaultdict

from posc.harness import latencies, run_scenario
from posc.scenario import ref_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=500)
    args = ap.parse_args()

    worst = defaultdict(lambda: [0, 0.0, 0])   # (n, behaviour) -> [max latency, max latency / own bound, failures]
    for seed in range(args.seeds):
        cfg = ref_sweep(seed)
        res = run_scenario(cfg)
        w = worst[(cfg.total, cfg.name.rsplit("-", 1)[-1])]
        lat = max(latencies(res.trace), default=0)
        w[0] = max(w[0], lat)
        w[1] = max(w[1], lat / cfg.ell_value)
        w[2] += not res.passed
    print(f"{'n':>3} {'behaviour':<12} {'max lat':>8} {'of bound':>9} {'failed':>6}")
    for (n, kind), (lat, bound, bad) in sorted(worst.items()):
        print(f"{n:>3} {kind:<12} {lat:>8} {bound:>9.2f} {bad:>6}")


if __name__ == "__main__":
    main()
