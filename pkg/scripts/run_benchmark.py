#!/usr/bin/env python3
"""Run the committed benchmark: methods, single-component removals, ratio sweep.

Each arm is averaged over five stream seeds against one shared pretrained
checkpoint. With --freeze the script rewrites tests/golden/benchmark_golden.json,
the frozen numbers the acceptance suite checks against; without it, results are
compared to the existing golden file and drift is reported.

Usage:
    python3 scripts/run_benchmark.py [--config configs/benchmark.json] [--freeze]
"""

import argparse
import json
import os
import sys
import time

sys.path.insert(0, os.path.join(os.path.dirname(__file__), "..", "src"))

from stamp_tta import benchmark, engine


def fmt_row(name, metrics):
    return "  %-10s acc=%.4f  auc=%s  h=%s" % (
        name,
        metrics["acc"],
        "  n/a " if metrics["auc"] is None else "%.4f" % metrics["auc"],
        "  n/a " if metrics["h_score"] is None else "%.4f" % metrics["h_score"],
    )


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=benchmark.DEFAULT_CONFIG_PATH)
    parser.add_argument("--freeze", action="store_true",
                        help="rewrite the golden file from this run")
    parser.add_argument("--out", default=None,
                        help="also dump the full result dict to this JSON file")
    args = parser.parse_args(argv)

    cfg = benchmark.load_benchmark_config(args.config)
    t0 = time.time()
    model, val_acc = engine.pretrain_source(cfg)
    print("pretrained source model: held-out accuracy %.4f (%.1fs)"
          % (val_acc, time.time() - t0))

    t0 = time.time()
    results = benchmark.run_protocol(cfg, model=model)
    print("protocol finished in %.1fs (seeds %s)\n"
          % (time.time() - t0, results["seeds"]))

    print("methods (5-seed means):")
    for name in benchmark.METHOD_ARMS:
        print(fmt_row(name, results["methods"][name]))
    print("\nsingle-component removals:")
    for name in benchmark.REMOVAL_ARMS:
        print(fmt_row(name, results["removals"][name]))
    print("\noutlier-ratio sweep:")
    for key in sorted(results["ratios"]):
        print(fmt_row("r=" + key, results["ratios"][key]))

    print("\nmargins:")
    for key, value in results["margins"].items():
        print("  %-28s %+.4f" % (key, value))

    if args.out:
        os.makedirs(os.path.dirname(args.out) or ".", exist_ok=True)
        with open(args.out, "w") as fh:
            json.dump(results, fh, indent=2, sort_keys=True)
        print("\nwrote %s" % args.out)

    if args.freeze:
        path = benchmark.write_golden(results)
        print("\nfroze golden numbers at %s" % path)
        return 0

    try:
        golden = benchmark.load_golden()
    except FileNotFoundError:
        print("\nno golden file yet; run with --freeze to create it")
        return 1
    drift = benchmark.compare_to_golden(results, golden)
    if drift:
        print("\nDRIFT against golden (tolerance %.3g):" % golden["tolerance"])
        for path, got, want in drift:
            print("  %-40s got=%s want=%.4f" % (path, got, want))
        return 1
    print("\nall numbers match the golden file within tolerance %.3g"
          % golden["tolerance"])
    return 0


if __name__ == "__main__":
    sys.exit(main())
