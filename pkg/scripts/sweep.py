"""Run the under-threshold sweep and tabulate verdicts by (n, behaviour, GST)."""

import argparse
import json
import time
from collections import defaultdict

from posc.harness import latencies, run_scenario
from posc.scenario import consistency_sweep


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=200)
    ap.add_argument("--json", help="write per-seed rows here")
    args = ap.parse_args()

    groups = defaultdict(lambda: {"runs": 0, "failed": 0, "max_latency": 0, "ell_star": 0})
    rows = []
    t0 = time.perf_counter()
    for seed in range(args.seeds):
        cfg = consistency_sweep(seed)
        res = run_scenario(cfg)
        lats = latencies(res.trace)
        g = groups[(cfg.total, cfg.adversary[0][1].kind if cfg.adversary else "-", cfg.network.gst)]
        g["runs"] += 1
        g["failed"] += not res.passed
        g["max_latency"] = max(g["max_latency"], max(lats, default=0))
        g["ell_star"] = max(g["ell_star"], cfg.ell_star)
        rows.append({"seed": seed, "name": cfg.name, "pass": res.passed,
                     "failed": sorted(k for k, v in res.verdicts.items() if not v["pass"])})
    print(f"{'n':>3} {'behaviour':<12} {'gst':>4} {'runs':>5} {'failed':>6} {'max lat':>8} {'ell*':>5}")
    for (n, kind, gst), g in sorted(groups.items()):
        print(f"{n:>3} {kind:<12} {gst:>4} {g['runs']:>5} {g['failed']:>6} {g['max_latency']:>8} {g['ell_star']:>5}")
    print(f"{sum(not r['pass'] for r in rows)} failing seeds of {len(rows)} in {time.perf_counter() - t0:.1f}s")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
