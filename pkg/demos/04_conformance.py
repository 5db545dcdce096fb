"""Exhaustive checking: every derivation up to a bound, every checker.

First the three fixtures and a batch of generated programs (all clean),
then a program that breaks the usage rules by committing a checkpoint it
never created, which yields a replayable counterexample.
"""

from __future__ import annotations

import time

from reverb.harness import CHECK_NAMES, explore, gen_program, load_fixture
from reverb.lang import parse_program

BAD = """
proc main:
  W = spawn w
  T = check
  send W, T
end
proc w:
  receive | X -> commit(X)
  end
end
"""


def main() -> None:
    start = time.perf_counter()
    for name in ("example1", "example2", "example3"):
        r = explore(load_fixture(name), "rollback", 12, CHECK_NAMES)
        print(f"{name}: {r.states} states, {r.derivations} derivations, violations {r.violations}")
    total = {c: 0 for c in CHECK_NAMES}
    for seed in range(30):
        r = explore(gen_program(seed), "rollback", 8, CHECK_NAMES)
        for c, n in r.violations.items():
            total[c] += n
    print(f"30 generated programs at depth 8: violations {total}")
    print(f"({time.perf_counter() - start:.1f}s)\n")

    r = explore(parse_program(BAD), "rollback", 6, CHECK_NAMES)
    print("Foreign commit:", r.violations)
    print(r.counterexamples[0])


if __name__ == "__main__":
    main()
