"""Uncontrolled reversible semantics: every step is recorded and any step may be undone.

Used as the reference relation when checking rollback derivations.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

from .ids import INITIAL_PID, Counters, Pid, Tag
from .lang import (
    LocalError,
    LocalState,
    LRec,
    LSend,
    LSeq,
    LSpawn,
    PidVal,
    Program,
    Stuck,
    Value,
    bind_future,
    local_status,
    local_step,
    match_rec,
    validate,
)
from .rollback import HSend, HSeq, HSpawn, _spawned_state, hist_text
from .standard import Choice, Label, NotEnabled


@dataclass(frozen=True)
class RevRec:
    s: LocalState
    sender: Pid
    tag: Tag
    val: Value

    @cached_property
    def text(self) -> str:
        return f"rec({self.s.text},@{self.sender},@{self.tag},{self.val.text})"


@dataclass(frozen=True)
class RevMessage:
    src: Pid
    dst: Pid
    tag: Tag
    val: Value

    @cached_property
    def text(self) -> str:
        return f"(@{self.src},@{self.dst},{{@{self.tag},{self.val.text}}})"


@dataclass(frozen=True)
class RevProc:
    pid: Pid
    state: LocalState
    hist: tuple = ()

    @cached_property
    def text(self) -> str:
        return f"<{hist_text(self.hist)},@{self.pid},{self.state.text}>"


@dataclass(frozen=True)
class RevSystem:
    procs: tuple[RevProc, ...]
    msgs: tuple[RevMessage, ...]
    prog: Program
    counters: Counters = field(default=Counters(), compare=False)

    def proc(self, pid: Pid) -> RevProc:
        for p in self.procs:
            if p.pid == pid:
                return p
        raise KeyError(pid)

    def floating(self, tag: Tag) -> int | None:
        for i, m in enumerate(self.msgs):
            if m.tag == tag:
                return i
        return None

    @cached_property
    def text(self) -> str:
        procs = sorted(self.procs, key=lambda p: p.pid)
        return " | ".join([p.text for p in procs] + sorted(m.text for m in self.msgs))


def rev_initial(prog: Program) -> RevSystem:
    validate(prog, "reversible")
    return RevSystem((RevProc(INITIAL_PID, prog.initial_state()),), (), prog)


def _backward_choice(sys: RevSystem, p: RevProc) -> Choice | None:
    if not p.hist:
        return None
    e = p.hist[0]
    if isinstance(e, HSeq):
        return Choice("undo-seq", p.pid)
    if isinstance(e, RevRec):
        return Choice("undo-rec", p.pid)
    if isinstance(e, HSend):
        return Choice("undo-send", p.pid) if sys.floating(e.tag) is not None else None
    try:
        child = sys.proc(e.child)
    except KeyError:
        return None
    if not child.hist and child.state == _spawned_state(e.s, sys.prog):
        return Choice("undo-spawn", p.pid)
    return None


def rev_enabled(sys: RevSystem) -> list[Choice]:
    out: list[Choice] = []
    for p in sorted(sys.procs, key=lambda q: q.pid):
        try:
            label, _ = local_step(p.state, sys.prog)
        except (Stuck, LocalError):
            label = None
        if isinstance(label, LRec):
            for i, m in enumerate(sys.msgs):
                if m.dst == p.pid and match_rec(label.clauses, m.val) is not None:
                    out.append(Choice("rec", p.pid, i))
        elif label is not None:
            out.append(Choice({LSeq: "seq", LSend: "send", LSpawn: "spawn"}[type(label)], p.pid))
        back = _backward_choice(sys, p)
        if back is not None:
            out.append(back)
    return out


def _put(sys: RevSystem, *new: RevProc, **changes) -> RevSystem:
    table = {p.pid: p for p in new}
    procs = tuple(table.pop(p.pid, p) for p in sys.procs) + tuple(table.values())
    return replace(sys, procs=procs, **changes)


def rev_step(sys: RevSystem, c: Choice) -> tuple[Label, RevSystem]:
    if c not in rev_enabled(sys):
        raise NotEnabled(c)
    return _apply(sys, c)


def _apply(sys: RevSystem, c: Choice) -> tuple[Label, RevSystem]:
    p = sys.proc(c.pid)
    if c.rule.startswith("undo-"):
        e, h = p.hist[0], p.hist[1:]
        p1 = replace(p, state=e.s, hist=h)
        if c.rule == "undo-seq":
            return Label(p.pid, "~seq"), _put(sys, p1)
        if c.rule == "undo-rec":
            msg = RevMessage(e.sender, p.pid, e.tag, e.val)
            return Label(p.pid, "~rec", e.tag), _put(sys, p1, msgs=sys.msgs + (msg,))
        if c.rule == "undo-send":
            i = sys.floating(e.tag)
            return Label(p.pid, "~send", e.tag), _put(sys, p1, msgs=sys.msgs[:i] + sys.msgs[i + 1 :])
        rest = _put(sys, p1)
        procs = tuple(q for q in rest.procs if q.pid != e.child)
        return Label(p.pid, "~spawn", e.child), replace(rest, procs=procs)
    label, s1 = local_step(p.state, sys.prog)
    s, h = p.state, p.hist
    if isinstance(label, LSeq):
        return Label(p.pid, "seq"), _put(sys, replace(p, state=s1, hist=(HSeq(s),) + h))
    if isinstance(label, LSend):
        tag, counters = sys.counters.fresh_tag()
        msg = RevMessage(p.pid, label.dest, tag, label.value)
        p1 = replace(p, state=s1, hist=(HSend(s, label.dest, tag),) + h)
        return Label(p.pid, "send", tag), _put(sys, p1, msgs=sys.msgs + (msg,), counters=counters)
    if isinstance(label, LRec):
        m = sys.msgs[c.arg]
        p1 = replace(p, state=bind_future(s1, match_rec(label.clauses, m.val)),
                     hist=(RevRec(s, m.src, m.tag, m.val),) + h)
        return Label(p.pid, "rec", m.tag), _put(sys, p1, msgs=sys.msgs[: c.arg] + sys.msgs[c.arg + 1 :])
    child, counters = sys.counters.fresh_pid()
    p1 = replace(p, state=bind_future(s1, PidVal(child)), hist=(HSpawn(s, child),) + h)
    return Label(p.pid, "spawn", child), _put(sys, p1, RevProc(child, label.child), counters=counters)


def rev_successors(sys: RevSystem):
    for c in rev_enabled(sys):
        label, nxt = _apply(sys, c)
        yield c, label, nxt


def rev_status(sys: RevSystem, enabled: list[Choice] | None = None) -> str | None:
    if enabled is None:
        enabled = rev_enabled(sys)
    if enabled:
        return None
    return local_status([p.state for p in sys.procs], sys.prog)
