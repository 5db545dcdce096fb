"""A commit that must wait: committing the outer checkpoint while an inner
one is still active is postponed, then undone by a rollback to the inner one.

Prints the main process's configuration (active set, delayed commits,
history shape, mode) each time it changes.
"""

from __future__ import annotations

from reverb.harness import load_fixture, run
from reverb.ids import Pid
from reverb.rollback import entry_kind


def shape(p) -> str:
    chks = "{" + ",".join(str(t) for t in sorted(p.chks)) + "}"
    delayed = "{" + ",".join(f"<{d.tau},h,{{{','.join(map(str, sorted(d.deps)))}}}>" for d in p.delayed) + "}"
    hist = "[" + ",".join(entry_kind(e) for e in p.hist) + "]"
    mode = "" if p.forward else f"  rolling back to {p.mode.target}"
    return f"C={chks:<8} D={delayed:<14} h={hist}{mode}"


def main() -> None:
    trace = run(load_fixture("example3"), "rollback", max_steps=40)
    p1 = Pid(1)
    last = trace.systems[0].proc(p1)
    print(f"{'start':<16} {shape(last)}")
    for lab, sys in zip(trace.labels, trace.systems[1:]):
        now = sys.proc(p1)
        if lab.pid == p1 and now.text != last.text:
            print(f"{lab.text:<16} {shape(now)}")
            last = now
        if lab.action == "~check":
            break


if __name__ == "__main__":
    main()
