"""An agent drops out mid-episode while holding work.

Runs the dropout scenario under the static allocator and under drama with
the same seed, then prints what happened to the orphaned tasks.

    python demos/dropout_recovery.py [seed]
"""

from __future__ import annotations

import sys
from pathlib import Path

from drama import Allocator, load_scenario, run_episode

SCENARIO = Path(__file__).parents[1] / "scenarios" / "dropout.json"


def main(seed: int = 0) -> None:
    spec = load_scenario(SCENARIO).with_(seed=seed)
    for alloc in (Allocator.STATIC, Allocator.DRAMA):
        epochs = []
        r = run_episode(spec.with_(allocator=alloc),
                        trace=lambda rec: rec["type"] == "epoch" and epochs.append(rec))
        print(f"== {alloc.value}")
        print(f"agent {r.changed_agent} dropped at tick {r.change_tick} "
              f"holding tasks {r.orphaned_tasks}")
        for e in epochs:
            print(f"  epoch {e['epoch']} at tick {e['tick']} ({e['trigger']}): {e['map']}")
        outcome = "all goals met" if r.success else "budget exhausted"
        print(f"  {outcome} after {r.ticks_used} ticks, TS={r.TS}, AS={r.AS}\n")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
