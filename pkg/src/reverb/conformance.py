"""Projections of rollback systems and the derivation checkers.

``proj_sta`` forgets everything the standard semantics does not know about;
``proj_rev`` keeps tags and the reversible part of histories.  The checkers
decide step legality by successor membership in the target semantics.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace
from typing import Iterable, Union

from .ids import INITIAL_PID, Pid, Tau
from .lang import erase_program, erase_value, sbar
from .reversible import RevMessage, RevProc, RevRec, RevSystem, rev_successors
from .rollback import (
    BACKWARD_RULES,
    HCommit,
    HRec,
    HSend,
    HSeq,
    HSpawn,
    RbSystem,
)
from .standard import Choice, Label, StdMessage, StdProc, StdSystem, std_successors

System = Union[StdSystem, RbSystem, RevSystem]


# ---------------------------------------------------------------------------
# Projections
# ---------------------------------------------------------------------------


def r_hist(h) -> tuple:
    """Reversible part of a history: checkpoint bookkeeping dropped, states closed."""
    out = []
    for e in h:
        if isinstance(e, HSeq):
            out.append(HSeq(sbar(e.s)))
        elif isinstance(e, HSend):
            out.append(HSend(sbar(e.s), e.dest, e.tag))
        elif isinstance(e, (HRec, RevRec)):
            out.append(RevRec(sbar(e.s), e.sender, e.tag, erase_value(e.val)))
        elif isinstance(e, HSpawn):
            out.append(HSpawn(sbar(e.s), e.child))
    return tuple(out)


def proj_sta(sys: RbSystem | StdSystem) -> StdSystem:
    procs = tuple(StdProc(p.pid, sbar(p.state)) for p in sys.procs)
    msgs = tuple(StdMessage(m.src, m.dst, erase_value(m.val)) for m in sys.msgs)
    return StdSystem(procs, msgs, erase_program(sys.prog), sys.counters)


def proj_rev(sys: RbSystem | RevSystem) -> RevSystem:
    procs = tuple(RevProc(p.pid, sbar(p.state), r_hist(p.hist)) for p in sys.procs)
    msgs = tuple(RevMessage(m.src, m.dst, m.tag, erase_value(m.val)) for m in sys.msgs)
    return RevSystem(procs, msgs, erase_program(sys.prog), sys.counters)


def sta_successor_texts(sys: RbSystem) -> frozenset[str]:
    """Texts of the standard one-step successors of ``sta(sys)``, normalized."""
    return frozenset(proj_sta(nxt).text for _, _, nxt in std_successors(proj_sta(sys)))


def rev_successor_texts(sys: RbSystem) -> frozenset[str]:
    return frozenset(proj_rev(nxt).text for _, _, nxt in rev_successors(proj_rev(sys)))


# ---------------------------------------------------------------------------
# Derivations and verdicts
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Step:
    choice: Choice
    label: Label
    system: System


@dataclass(frozen=True)
class Derivation:
    initial: System
    steps: tuple[Step, ...]
    semantics: str = "rollback"
    # Imported traces certify reachability by replay; engine runs start initial.
    reachable: bool = False

    def systems(self) -> list[System]:
        return [self.initial] + [s.system for s in self.steps]


@dataclass(frozen=True)
class Violation:
    index: int
    rule: str
    description: str

    def __str__(self) -> str:
        return f"step {self.index}: [{self.rule}] {self.description}"


@dataclass
class Verdict:
    violations: list[Violation] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def add(self, index: int, rule: str, description: str) -> None:
        self.violations.append(Violation(index, rule, description))


def is_initial(sys: RbSystem) -> bool:
    if len(sys.procs) != 1 or sys.msgs:
        return False
    p = sys.procs[0]
    return (
        p.pid == INITIAL_PID and not p.chks and not p.delayed and not p.hist
        and p.forward and p.state == sys.prog.initial_state()
    )


def is_backward(choice: Choice) -> bool:
    return choice.rule in BACKWARD_RULES


# ---------------------------------------------------------------------------
# Path monitor
# ---------------------------------------------------------------------------

_TAU = re.compile(r"@t(\d+)")


@dataclass(frozen=True)
class PathSummary:
    """What the path-sensitive checks remember about the steps taken so far."""

    creators: frozenset[tuple[Tau, Pid]] = frozenset()
    rolled: frozenset[tuple[Pid, Tau]] = frozenset()
    guarded: frozenset[tuple[Pid, Tau]] = frozenset()
    forward_only: bool = True

    @property
    def text(self) -> str:
        cr = ",".join(f"@{t}:@{p}" for t, p in sorted(self.creators))
        ro = ",".join(f"@{p}:@{t}" for p, t in sorted(self.rolled))
        gu = ",".join(f"@{p}:@{t}" for p, t in sorted(self.guarded))
        return f"#{cr}#{ro}#{gu}#{int(self.forward_only)}"

    def creator(self, tau: Tau) -> Pid | None:
        for t, p in self.creators:
            if t == tau:
                return p
        return None

    def pruned(self, sys: RbSystem) -> PathSummary:
        live = {Tau(int(n)) for n in _TAU.findall(sys.text)}
        return PathSummary(
            frozenset(x for x in self.creators if x[0] in live),
            frozenset(x for x in self.rolled if x[1] in live),
            frozenset(x for x in self.guarded if x[1] in live),
            self.forward_only,
        )


def monitor_step(
    summary: PathSummary, index: int, choice: Choice, label: Label, nxt: RbSystem
) -> tuple[PathSummary, list[Violation], list[Violation]]:
    """Advance the monitor over one step.

    Returns the new summary plus the well-definedness and lemma violations
    the step commits.
    """
    wd: list[Violation] = []
    lemma: list[Violation] = []
    creators, rolled, guarded = set(summary.creators), set(summary.rolled), set(summary.guarded)
    pid, action, arg = label.pid, label.action, label.arg
    if action == "check":
        creators.add((arg, pid))
        guarded.add((pid, arg))
    elif action in ("commit", "delay", "rollback"):
        owner = summary.creator(arg)
        cond = "unchecked-" + ("rollback" if action == "rollback" else "commit")
        if owner is None:
            wd.append(Violation(index, cond, f"{action}({arg}) by {pid} without a preceding check({arg})"))
        elif owner != pid:
            wd.append(Violation(index, "creator", f"{action}({arg}) by {pid} but {arg} was created by {owner}"))
        if action == "rollback":
            rolled.add((pid, arg))
            if (pid, arg) not in guarded:
                lemma.append(Violation(
                    index, "lemma", f"active set of {pid} not kept nonempty since check({arg})"
                ))
    # Commit uniqueness and the lemma's invariant are judged on the successor snapshot.
    for p in nxt.procs:
        seen: set[Tau] = set()
        for e in p.hist:
            if isinstance(e, HCommit):
                if e.tau in seen:
                    wd.append(Violation(index, "double-commit", f"{p.pid} history holds commit({e.tau}) twice"))
                seen.add(e.tau)
                if (p.pid, e.tau) in rolled:
                    wd.append(Violation(
                        index, "commit-after-rollback", f"{p.pid} history holds commit({e.tau}) after rollback({e.tau})"
                    ))
    empty = {p.pid for p in nxt.procs if not p.chks}
    present = {p.pid for p in nxt.procs}
    guarded = {(p, t) for p, t in guarded if p in present and p not in empty}
    new = PathSummary(
        frozenset(creators), frozenset(rolled), frozenset(guarded),
        summary.forward_only and not is_backward(choice),
    )
    return new, wd, lemma


# ---------------------------------------------------------------------------
# Per-step legality
# ---------------------------------------------------------------------------


class Successors:
    """Lazily computed projected successor sets of one rollback system."""

    def __init__(self, sys: RbSystem):
        self.sys = sys
        self._sta: frozenset[str] | None = None
        self._rev: frozenset[str] | None = None

    @property
    def sta(self) -> frozenset[str]:
        if self._sta is None:
            self._sta = sta_successor_texts(self.sys)
        return self._sta

    @property
    def rev(self) -> frozenset[str]:
        if self._rev is None:
            self._rev = rev_successor_texts(self.sys)
        return self._rev


def sta_legal(sys: RbSystem, nxt: RbSystem, succ: frozenset[str] | None = None) -> str | None:
    """Which standard branch justifies the step, or None."""
    after = proj_sta(nxt).text
    if proj_sta(sys).text == after:
        return "sta="
    if after in (succ if succ is not None else sta_successor_texts(sys)):
        return "sta-step"
    return None


def soundness_branch(sys: RbSystem, nxt: RbSystem, succ: Successors | None = None) -> str | None:
    """First of sta=, rev=, sta-step, rev-step that justifies the step, or None."""
    succ = succ or Successors(sys)
    after_sta, after_rev = proj_sta(nxt).text, proj_rev(nxt).text
    if proj_sta(sys).text == after_sta:
        return "sta="
    if proj_rev(sys).text == after_rev:
        return "rev="
    if after_sta in succ.sta:
        return "sta-step"
    if after_rev in succ.rev:
        return "rev-step"
    return None


# ---------------------------------------------------------------------------
# Derivation checkers
# ---------------------------------------------------------------------------


def _require_rollback(d: Derivation) -> None:
    if d.semantics != "rollback":
        raise ValueError(f"checker needs a rollback derivation, got {d.semantics}")


def check_well_defined(d: Derivation) -> Verdict:
    _require_rollback(d)
    v = Verdict()
    if not (d.reachable or is_initial(d.initial)):
        v.add(0, "unreachable-start", "initial snapshot is not an initial system")
    summary = PathSummary()
    for i, st in enumerate(d.steps):
        summary, wd, _ = monitor_step(summary, i, st.choice, st.label, st.system)
        v.violations.extend(wd)
    return v


def check_theorem_conservative(d: Derivation) -> Verdict:
    """Forward prefix of ``d`` projects to a standard derivation (up to equal steps)."""
    _require_rollback(d)
    v = Verdict()
    prev = d.initial
    for i, st in enumerate(d.steps):
        if is_backward(st.choice):
            v.notes.append(f"steps {i}.. skipped: backward rules in use")
            break
        branch = sta_legal(prev, st.system)
        if branch is None:
            v.add(i, "conservative", f"{st.label} has no standard counterpart")
        else:
            v.notes.append(f"{i}:{branch}")
        prev = st.system
    return v


def check_theorem_soundness(d: Derivation) -> Verdict:
    _require_rollback(d)
    v = Verdict()
    prev = d.initial
    for i, st in enumerate(d.steps):
        branch = soundness_branch(prev, st.system)
        if branch is None:
            v.add(i, "soundness", f"{st.label} has no standard or reversible counterpart")
        else:
            v.notes.append(f"{i}:{branch}")
        prev = st.system
    return v


def check_lemma_rollback(d: Derivation) -> Verdict:
    _require_rollback(d)
    v = Verdict()
    summary = PathSummary()
    for i, st in enumerate(d.steps):
        summary, _, lemma = monitor_step(summary, i, st.choice, st.label, st.system)
        v.violations.extend(lemma)
    return v


CHECKERS = {
    "wellformed": check_well_defined,
    "conservative": check_theorem_conservative,
    "soundness": check_theorem_soundness,
    "lemma": check_lemma_rollback,
}


def check_all(d: Derivation, names: Iterable[str] = CHECKERS) -> dict[str, Verdict]:
    return {n: CHECKERS[n](d) for n in names}


def with_snapshot(d: Derivation, index: int, system: System) -> Derivation:
    """Copy of ``d`` with snapshot ``index`` swapped; used to build mutants."""
    steps = list(d.steps)
    steps[index] = replace(steps[index], system=system)
    return replace(d, steps=tuple(steps))
