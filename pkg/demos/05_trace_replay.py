"""Traces are plain text and replayable; tampering is caught.

Runs a program with a seeded random scheduler, verifies the trace, then
edits one record and verifies again.
"""

from __future__ import annotations

from reverb.harness import SeededRandom, load_fixture, run, verify


def main() -> None:
    trace = run(load_fixture("example3"), "rollback", SeededRandom(3), max_steps=25)
    text = trace.render()
    body = [ln for ln in text.splitlines() if not ln.startswith("#")]
    print("\n".join(body[:6]), "\n...")

    result = verify(text)
    print(f"\nverify: divergence={result.divergence} status={result.status}")
    for name, verdict in result.verdicts.items():
        print(f"  {name:<13} {'pass' if verdict.passed else 'FAIL'}")

    lines = text.splitlines()
    target = lines.index(body[4])
    fields = lines[target].split("\t")
    fields[4] += "?"
    lines[target] = "\t".join(fields)
    tampered = verify("\n".join(lines) + "\n")
    print(f"\nafter editing record 4: divergence at {tampered.divergence} ({tampered.message})")


if __name__ == "__main__":
    main()
