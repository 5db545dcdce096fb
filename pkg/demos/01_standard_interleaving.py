"""Three processes under the irreversible semantics.

Replays a hand-picked interleaving of the three-process program, then lets
the default scheduler finish the run.
"""

from __future__ import annotations

from reverb.harness import PROGRAMS_DIR, Scripted, load_fixture, run


def main() -> None:
    prog = load_fixture("example1")
    script = Scripted.parse((PROGRAMS_DIR / "example1.script").read_text())
    trace = run(prog, "standard", script)
    print("Scripted interleaving:")
    for rec in trace.records:
        print(f"  {rec.index:>2}  {rec.label}")
    print(f"  (script exhausted, status {trace.status})\n")

    full = run(prog, "standard")
    print(f"Default scheduler: {len(full.records)} steps, status {full.status}")
    print("Labels:", " ".join(lab.text for lab in full.labels))


if __name__ == "__main__":
    main()
