#!/usr/bin/env python3
"""Generate a synthetic suite and compare search against reference-only
answering, both driven by the geometric oracles.

    python scripts/run_oracle_benchmark.py --seed 7 --count 50 --out out/oracle
"""

from __future__ import annotations

import argparse
from pathlib import Path

from spatialbeam.bench import (
    emit_report,
    generate_suite,
    load_dataset,
    oracle_backends,
    run_benchmark,
    write_suite,
)
from spatialbeam.geometry import Intrinsics
from spatialbeam.search import SearchConfig


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=7)
    parser.add_argument("--count", type=int, default=50)
    parser.add_argument("--frame-size", type=int, default=256)
    parser.add_argument("--out", type=Path, default=Path("out/oracle"))
    args = parser.parse_args()

    intrinsics = Intrinsics.from_fov(args.frame_size, args.frame_size)
    cfg = SearchConfig()
    cases = generate_suite(args.seed, args.count, intrinsics=intrinsics, cfg=cfg)
    dataset = load_dataset(write_suite(cases, args.out))
    backends = oracle_backends(dataset, intrinsics)

    search = run_benchmark(dataset, *backends, cfg, intrinsics=intrinsics)
    baseline = run_benchmark(dataset, *backends, cfg, baseline=True,
                             intrinsics=intrinsics)

    for report in (baseline, search):
        print(emit_report(report, "text-table"))
        (args.out / f"{report.label}.report.json").write_text(
            emit_report(report, "structured"), encoding="utf-8")
    gain = search.average_accuracy - baseline.average_accuracy
    print(f"search gain over baseline: {100 * gain:+.1f} points "
          f"({search.wall_clock_seconds:.0f}s search, "
          f"{baseline.wall_clock_seconds:.0f}s baseline)")


if __name__ == "__main__":
    main()
