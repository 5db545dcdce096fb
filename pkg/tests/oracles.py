"""Independent oracles shared by the property tests and the acceptance run."""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace

from reverb import conformance as cf
from reverb.harness import canonical_key, engine, gen_program, load_fixture, run
from reverb.ids import Pid, Tau
from reverb.lang import Atom, erase_program, parse_program
from reverb.reversible import rev_enabled, rev_initial, rev_step
from reverb.rollback import (
    Backward,
    HCommit,
    RuntimeFault,
    entry_kind,
    rb_enabled,
    rb_initial,
    rb_step,
)
from reverb.standard import Choice

FIXTURES = ("example1", "example2", "example3")

# Spawns under an active checkpoint; the fixtures and generator spawn before checking.
EXTRA = (
    """
proc main:
  T = check
  W = spawn w
  send W, {hi, W}
  receive | back -> end
  commit(T)
end
proc w:
  U = check
  receive | {hi, Me} -> seq got
  end
  V = spawn z
  send V, go
  commit(U)
end
proc z:
  receive | go -> seq done
  end
end
""",
    """
proc main:
  T = check
  A = spawn w
  B = spawn w
  send A, B
  rollback(T)
end
proc w:
  receive
    | X -> send X, back
  end
  receive | back -> end
end
""",
)
UNDOABLE = ("seq", "send", "rec", "spawn", "check", "commit")


def _programs(rng: random.Random):
    """Endless supply of rollback programs: fixtures, then generated and handwritten ones."""
    for name in FIXTURES:
        yield load_fixture(name)
    extra = [parse_program(src) for src in EXTRA]
    while True:
        yield gen_program(rng.randrange(10_000), 3, 8)
        yield extra[rng.randrange(len(extra))]


def _msgs(sys) -> list[str]:
    return sorted(m.text for m in sys.msgs)


# ---------------------------------------------------------------------------
# Local inverse: forward step then its matching backward rule
# ---------------------------------------------------------------------------


@dataclass
class InverseOutcome:
    tried: int = 0
    failures: list[str] = field(default_factory=list)


def inverse_of(sys, choice: Choice, rng: random.Random):
    """Take ``choice`` forward, then undo it; None if not applicable."""
    try:
        _, nxt = rb_step(sys, choice)
    except RuntimeFault:
        return None
    q = nxt.proc(choice.pid)
    if not q.chks or not q.hist:
        return None
    target = rng.choice(sorted(q.chks))
    back = [replace(q, mode=Backward(target))]
    head = q.hist[0]
    kind = entry_kind(head)
    if kind == "spawn":
        back.append(replace(nxt.proc(head.child), mode=Backward(target)))
    table = {p.pid: p for p in back}
    staged = replace(nxt, procs=tuple(table.get(p.pid, p) for p in nxt.procs))
    undo = Choice("undo-" + kind, choice.pid)
    if undo not in rb_enabled(staged):
        return "not-enabled", staged, undo
    _, restored = rb_step(staged, undo)
    return "ok", restored, undo


def local_inverse_trials(n: int, seed: int = 0) -> InverseOutcome:
    rng = random.Random(seed)
    out = InverseOutcome()
    programs = _programs(rng)
    sys, steps = rb_initial(next(programs)), 0
    while out.tried < n:
        enabled = rb_enabled(sys)
        if not enabled or steps > 60:
            sys, steps = rb_initial(next(programs)), 0
            continue
        for c in enabled:
            if c.rule not in UNDOABLE or not sys.proc(c.pid).forward:
                continue
            res = inverse_of(sys, c, rng)
            if res is None:
                continue
            out.tried += 1
            status, restored, undo = res
            p, r = sys.proc(c.pid), restored.proc(c.pid)
            if status != "ok":
                out.failures.append(f"{undo} not enabled after {c}")
            elif (p.chks, p.hist, p.state, p.delayed) != (r.chks, r.hist, r.state, r.delayed):
                out.failures.append(f"{c}: process not restored")
            elif _msgs(sys) != _msgs(restored) or {x.pid for x in sys.procs} != {x.pid for x in restored.procs}:
                out.failures.append(f"{c}: messages or process set not restored")
            if out.tried >= n:
                break
        try:
            _, sys = rb_step(sys, rng.choice(enabled))
        except RuntimeFault:
            sys, steps = rb_initial(next(programs)), 0
        steps += 1
    return out


# ---------------------------------------------------------------------------
# Loop property of the reversible semantics
# ---------------------------------------------------------------------------


def loop_trials(n: int, seed: int = 0) -> tuple[int, list[str]]:
    """Forward step, then undo it; the system must come back unchanged."""
    rng = random.Random(seed)
    programs = _programs(rng)
    failures: list[str] = []
    done = 0
    sys, steps = rev_initial(erase_program(next(programs))), 0
    while done < n:
        enabled = rev_enabled(sys)
        forward = [c for c in enabled if not c.rule.startswith("undo-")]
        if not forward or steps > 60:
            sys, steps = rev_initial(erase_program(next(programs))), 0
            continue
        c = rng.choice(forward)
        _, nxt = rev_step(sys, c)
        undo = Choice("undo-" + c.rule, c.pid)
        if undo not in rev_enabled(nxt):
            failures.append(f"{undo} not enabled after {c}")
        else:
            _, back = rev_step(nxt, undo)
            if back.text != sys.text:
                failures.append(f"{c}: system not restored")
        done += 1
        # Wander with both kinds of steps so later trials start from varied states.
        _, sys = rev_step(sys, rng.choice(enabled))
        steps += 1
    return done, failures


# ---------------------------------------------------------------------------
# Naive enumeration, used to validate explore's counts
# ---------------------------------------------------------------------------


def dfs_counts(prog, semantics: str, depth: int) -> tuple[int, int, int]:
    """(distinct states, maximal derivations, faulting edges) by plain recursion."""
    eng = engine(semantics)
    track = semantics == "rollback"
    keys: set[str] = set()
    fault_edges: set[tuple[str, str]] = set()

    def key(sys, summary):
        return canonical_key(sys, summary.text if summary is not None else "")

    def walk(sys, summary, left: int) -> int:
        k = key(sys, summary)
        keys.add(k)
        if left == 0:
            return 1
        enabled = eng.enabled(sys)
        if not enabled:
            return 1
        total = 0
        for c in enabled:
            try:
                label, nxt = eng.apply(sys, c)
            except RuntimeFault:
                fault_edges.add((k, c.key))
                total += 1
                continue
            nsum = None
            if track:
                nsum, _, _ = cf.monitor_step(summary, 0, c, label, nxt)
                nsum = nsum.pruned(nxt)
            total += walk(nxt, nsum, left - 1)
        return total

    init = eng.initial(prog, False)
    derivations = walk(init, cf.PathSummary() if track else None, depth)
    return len(keys), derivations, len(fault_edges)


# ---------------------------------------------------------------------------
# Mutation corpus: each entry must be rejected by the named checker
# ---------------------------------------------------------------------------


def _edit_proc(sys, pid: Pid, **changes):
    return replace(sys, procs=tuple(replace(p, **changes) if p.pid == pid else p for p in sys.procs))


def _relabel(d: cf.Derivation, index: int, **changes) -> cf.Derivation:
    steps = list(d.steps)
    steps[index] = replace(steps[index], label=replace(steps[index].label, **changes))
    return replace(d, steps=tuple(steps))


def _find(d: cf.Derivation, action: str, pid: int = 1) -> int:
    for i, st in enumerate(d.steps):
        if st.label.action == action and st.label.pid == Pid(pid):
            return i
    raise LookupError(action)


def base_derivations() -> dict[str, cf.Derivation]:
    ex2 = run(load_fixture("example2"), "rollback", max_steps=34).derivation()
    ex3 = run(load_fixture("example3"), "rollback", max_steps=25).derivation()
    return {"ex2": ex2, "ex3": ex3}


def mutation_corpus() -> list[tuple[str, str, cf.Derivation]]:
    """(checker, description, mutant) triples."""
    b = base_derivations()
    ex2, ex3 = b["ex2"], b["ex3"]
    p1, p2 = Pid(1), Pid(2)
    out: list[tuple[str, str, cf.Derivation]] = []

    # Well-definedness.
    out.append(("wellformed", "starts from a non-initial system", replace(ex2, initial=ex2.steps[3].system)))
    i = _find(ex2, "commit")
    out.append(("wellformed", "commit of a never-checked checkpoint", _relabel(ex2, i, arg=Tau(9))))
    i = _find(ex2, "rollback")
    out.append(("wellformed", "rollback issued by a non-creator", _relabel(ex2, i, pid=p2)))
    i = _find(ex2, "commit")
    sys = ex2.steps[i].system
    dup = _edit_proc(sys, p1, hist=(sys.proc(p1).hist[0],) + sys.proc(p1).hist)
    out.append(("wellformed", "history holds the same commit twice", cf.with_snapshot(ex2, i, dup)))
    i = _find(ex2, "rollback") + 1
    sys = ex2.steps[i].system
    late = _edit_proc(sys, p1, hist=(HCommit(Tau(1), sys.proc(p1).state),) + sys.proc(p1).hist)
    out.append(("wellformed", "commit(t1) recorded after rollback(t1)", cf.with_snapshot(ex2, i, late)))

    # Conservativity: forward steps only.
    i = _find(ex2, "send")
    sys = ex2.steps[i].system
    out.append(("conservative", "send that loses its message", cf.with_snapshot(ex2, i, replace(sys, msgs=()))))
    i = _find(ex2, "spawn")
    sys = ex2.steps[i].system
    init_state = sys.prog.initial_state()
    out.append(("conservative", "spawn that also resets the parent",
                cf.with_snapshot(ex2, i + 1, _edit_proc(ex2.steps[i + 1].system, p1, state=init_state))))
    i = _find(ex2, "send")
    sys = ex2.steps[i].system
    bent = replace(sys, msgs=tuple(replace(m, val=Atom("v9")) for m in sys.msgs))
    out.append(("conservative", "send with a corrupted payload", cf.with_snapshot(ex2, i, bent)))
    out.append(("conservative", "two forward steps collapsed into one",
                cf.with_snapshot(ex2, 4, ex2.steps[6].system)))

    # Soundness: backward as well as forward steps.
    i = _find(ex2, "~send", 3)
    sys = ex2.steps[i].system
    extra = ex2.steps[i - 1].system.msgs
    out.append(("soundness", "undo-send that keeps a duplicate message",
                cf.with_snapshot(ex2, i, replace(sys, msgs=sys.msgs + extra))))
    i = _find(ex2, "~rec", 3)
    sys = ex2.steps[i].system
    out.append(("soundness", "undo-rec that drops a process",
                cf.with_snapshot(ex2, i, replace(sys, procs=tuple(p for p in sys.procs if p.pid != Pid(3))))))
    i = _find(ex3, "send")
    sys = ex3.steps[i].system
    out.append(("soundness", "forward send with a corrupted payload",
                cf.with_snapshot(ex3, i, replace(sys, msgs=tuple(replace(m, val=Atom("zz")) for m in sys.msgs)))))
    i = _find(ex2, "~seq")
    out.append(("soundness", "backward step that jumps two steps ahead",
                cf.with_snapshot(ex2, i, ex2.steps[i + 3].system)))

    # Rollback lemma.
    i = _find(ex2, "rollback")
    out.append(("lemma", "rollback to a checkpoint the process never held", _relabel(ex2, i, arg=Tau(7))))
    j = _find(ex2, "check")
    out.append(("lemma", "check step that records no checkpoint", _relabel(ex2, j, action="seq", arg=None)))
    k = _find(ex2, "send", 2)
    sys = ex2.steps[k].system
    out.append(("lemma", "active set emptied between check and rollback",
                cf.with_snapshot(ex2, k, _edit_proc(sys, p1, chks=frozenset()))))
    return out
