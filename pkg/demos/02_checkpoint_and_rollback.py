"""Checkpoints spread through messages; a rollback drags dependants back.

Prints each process's active checkpoint set after every step, marking
processes that are rolling back with ``^``, and finally the operator-free
view of the system once the rollback has completed.
"""

from __future__ import annotations

from reverb.conformance import proj_sta
from reverb.harness import load_fixture, run


def sets(sys) -> str:
    cells = []
    for p in sorted(sys.procs, key=lambda q: q.pid):
        chks = "{" + ",".join(str(t) for t in sorted(p.chks)) + "}"
        cells.append(f"{p.pid}{'' if p.forward else '^'}{chks}".ljust(12))
    return "  ".join(cells)


def main() -> None:
    trace = run(load_fixture("example2"), "rollback", max_steps=60)
    rolled_back = False
    print(f"{'':>3}  {'step':<20}  active sets")
    for i, (lab, sys) in enumerate(zip(trace.labels, trace.systems[1:])):
        print(f"{i:>3}  {lab.text:<20}  {sets(sys)}")
        if lab.action == "rollback":
            rolled_back = True
        elif rolled_back and all(p.forward for p in sys.procs):
            print("\nRollback complete. Operator-free view of the system:")
            for part in proj_sta(sys).text.split(" | "):
                print("  ", part)
            break
    print("\nIn faithful mode main now re-runs its check and the scenario repeats;"
          " try mode='handler' to resume after the rollback call instead.")


if __name__ == "__main__":
    main()
