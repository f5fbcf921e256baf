"""Compare the three allocators on every bundled scenario.

Each allocator sees the same seeds, so differences in steps come from the
allocation policy alone.

    python demos/allocator_comparison.py [episodes]
"""

from __future__ import annotations

import sys
from pathlib import Path

from drama import Allocator, load_scenario, run_suite, summarize

SCENARIOS = Path(__file__).parents[1] / "scenarios"


def main(episodes: int = 20) -> None:
    specs = [load_scenario(SCENARIOS / f"{n}.json")
             for n in ("static2", "static3", "static4", "dropout", "addition")]
    rows = summarize(run_suite(specs, list(range(episodes)), list(Allocator)))
    print(f"{'scenario':<10} {'allocator':<11} {'SR':>5} {'med AS':>7} {'med TS':>7} {'IQR TS':>7}")
    for s in rows:
        fmt = lambda v: "-" if v is None else f"{v:g}"
        print(f"{s.scenario:<10} {s.allocator:<11} {s.SR:>5.2f} {fmt(s.median_AS):>7} "
              f"{fmt(s.median_TS):>7} {fmt(s.iqr_TS):>7}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 20)
