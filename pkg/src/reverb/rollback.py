"""Rollback-recovery semantics: forward rules, backward rules, commit machinery.

A process carries its active checkpoints ``chks`` (C), its delayed commits
``delayed`` (D) and a history ``hist`` (h, newest entry first).  A process in
backward mode carries the checkpoint driving the rollback.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, Union

from .ids import INITIAL_PID, Counters, Pid, Tag, Tau
from .lang import (
    ChkVal,
    LCheck,
    LCommit,
    LocalError,
    LocalState,
    LRec,
    LRollback,
    LSend,
    LSeq,
    LSpawn,
    PidVal,
    Program,
    Statement,
    Stuck,
    Value,
    bind_future,
    local_step,
    match_rec,
    seq_text,
    local_status,
    validate,
)
from .standard import Choice, Label, NotEnabled


class RuntimeFault(Exception):
    """commit/rollback named a checkpoint that is not active in the caller."""

    def __init__(self, pid: Pid, tau: Tau, op: str):
        self.pid = pid
        self.tau = tau
        self.op = op
        super().__init__(f"inactive checkpoint: {pid} called {op}({tau})")


class DependencyError(Exception):
    """Commit propagation reached a pid that is not in the system."""


def _tset(ts: Iterable) -> str:
    return "{" + ",".join(f"@{t}" for t in sorted(ts)) + "}"


# ---------------------------------------------------------------------------
# Messages and history entries
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class RbMessage:
    chks: frozenset[Tau]
    src: Pid
    dst: Pid
    tag: Tag
    val: Value

    @cached_property
    def text(self) -> str:
        return f"({_tset(self.chks)},@{self.src},@{self.dst},{{@{self.tag},{self.val.text}}})"


@dataclass(frozen=True)
class HSeq:
    s: LocalState

    @cached_property
    def text(self) -> str:
        return f"seq({self.s.text})"


@dataclass(frozen=True)
class HSend:
    s: LocalState
    dest: Pid
    tag: Tag

    @cached_property
    def text(self) -> str:
        return f"send({self.s.text},@{self.dest},@{self.tag})"


@dataclass(frozen=True)
class HRec:
    forced: frozenset[Tau]
    msg_chks: frozenset[Tau]
    s: LocalState
    sender: Pid
    tag: Tag
    val: Value

    @cached_property
    def text(self) -> str:
        return (
            f"rec({_tset(self.forced)},{_tset(self.msg_chks)},{self.s.text},"
            f"@{self.sender},@{self.tag},{self.val.text})"
        )


@dataclass(frozen=True)
class HSpawn:
    s: LocalState
    child: Pid

    @cached_property
    def text(self) -> str:
        return f"spawn({self.s.text},@{self.child})"


@dataclass(frozen=True)
class HCheck:
    tau: Tau
    s: LocalState

    @cached_property
    def text(self) -> str:
        return f"check(@{self.tau},{self.s.text})"


@dataclass(frozen=True)
class HCommit:
    tau: Tau
    s: LocalState

    @cached_property
    def text(self) -> str:
        return f"commit(@{self.tau},{self.s.text})"


HistoryEntry = Union[HSeq, HSend, HRec, HSpawn, HCheck, HCommit]
History = tuple  # tuple[HistoryEntry, ...], newest first


def hist_text(h: History) -> str:
    return "[" + ",".join(e.text for e in h) + "]"


def entry_kind(e: HistoryEntry) -> str:
    return type(e).__name__[1:].lower()


# ---------------------------------------------------------------------------
# Processes and systems
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class DelayedCommit:
    tau: Tau
    hist: History
    deps: frozenset[Pid]

    @cached_property
    def text(self) -> str:
        deps = "{" + ",".join(f"@{p}" for p in sorted(self.deps)) + "}"
        return f"<@{self.tau},{hist_text(self.hist)},{deps}>"


@dataclass(frozen=True)
class Backward:
    target: Tau
    # Statements after the rollback call; only used when resuming in handler mode.
    resume: tuple[Statement, ...] = ()


@dataclass(frozen=True)
class RbProc:
    pid: Pid
    state: LocalState
    chks: frozenset[Tau] = frozenset()
    delayed: tuple[DelayedCommit, ...] = ()
    hist: History = ()
    mode: Backward | None = None

    @property
    def forward(self) -> bool:
        return self.mode is None

    def delayed_for(self, tau: Tau) -> DelayedCommit | None:
        for d in self.delayed:
            if d.tau == tau:
                return d
        return None

    @cached_property
    def text(self) -> str:
        mode = "" if self.mode is None else f"^@{self.mode.target}[{seq_text(self.mode.resume)}]"
        dl = "{" + ",".join(d.text for d in self.delayed) + "}"
        return f"<{_tset(self.chks)},{dl},{hist_text(self.hist)},@{self.pid},{self.state.text}>{mode}"


@dataclass(frozen=True)
class RbSystem:
    procs: tuple[RbProc, ...]
    msgs: tuple[RbMessage, ...]
    prog: Program
    counters: Counters = field(default=Counters(), compare=False)
    handler: bool = False

    def proc(self, pid: Pid) -> RbProc:
        for p in self.procs:
            if p.pid == pid:
                return p
        raise KeyError(pid)

    def has_pid(self, pid: Pid) -> bool:
        return any(p.pid == pid for p in self.procs)

    def floating(self, tag: Tag) -> int | None:
        for i, m in enumerate(self.msgs):
            if m.tag == tag:
                return i
        return None

    @cached_property
    def text(self) -> str:
        procs = sorted(self.procs, key=lambda p: p.pid)
        return " | ".join([p.text for p in procs] + sorted(m.text for m in self.msgs))


def rb_initial(prog: Program, handler: bool = False) -> RbSystem:
    validate(prog, "rollback")
    return RbSystem((RbProc(INITIAL_PID, prog.initial_state()),), (), prog, handler=handler)


# ---------------------------------------------------------------------------
# Auxiliary functions
# ---------------------------------------------------------------------------


def add_hist(chks: frozenset[Tau], e: HistoryEntry, h: History) -> History:
    return (e,) + h if chks else h


def last_active(t: Tau, h: History, chks: frozenset[Tau]) -> bool:
    """Is ``t`` the newest still-active checkpoint introduced in ``h``?"""
    for e in h:
        if isinstance(e, HCheck):
            if e.tau in chks:
                return e.tau == t
        elif isinstance(e, HRec):
            if e.forced & chks:
                return t in e.forced
    return False


def _introduced_at(t: Tau, h: History) -> int:
    at = None
    for i, e in enumerate(h):
        if (isinstance(e, HCheck) and e.tau == t) or (isinstance(e, HRec) and t in e.forced):
            at = i
    if at is None:
        raise KeyError(t)
    return at


def dep_pids(t: Tau, h: History) -> frozenset[Pid]:
    """Pids reached by spawns and sends newer than the entry that introduced ``t``."""
    return _reached(h[: _introduced_at(t, h)])


def _reached(entries) -> frozenset[Pid]:
    out = set()
    for e in entries:
        if isinstance(e, HSpawn):
            out.add(e.child)
        elif isinstance(e, HSend):
            out.add(e.dest)
    return frozenset(out)


def _deps_or_all(t: Tau, h: History) -> frozenset[Pid]:
    # A checkpoint inherited at spawn time has no introducing entry.
    try:
        return dep_pids(t, h)
    except KeyError:
        return _reached(h)


def propagate_commit(t: Tau, deps: Iterable[Pid], sys: RbSystem) -> RbSystem:
    table = {p.pid: p for p in sys.procs}
    work = list(deps)
    seen: set[Pid] = set()
    while work:
        q = work.pop()
        if q in seen:
            continue
        seen.add(q)
        if q not in table:
            raise DependencyError(f"commit of {t} reached unknown process {q}")
        proc = table[q]
        if t not in proc.chks:
            continue
        table[q] = replace(proc, chks=proc.chks - {t})
        work.extend(_deps_or_all(t, proc.hist))
    return replace(sys, procs=tuple(table[p.pid] for p in sys.procs))


# ---------------------------------------------------------------------------
# Enabled choices
# ---------------------------------------------------------------------------

FORWARD_RULES = ("seq", "send", "rec", "spawn", "check", "commit", "delay", "rollback")
BACKWARD_RULES = (
    "undo-seq", "undo-send", "undo-rec", "undo-spawn", "undo-check", "undo-commit",
    "prop-send", "prop-spawn",
)


def _local(proc: RbProc, prog: Program):
    try:
        return local_step(proc.state, prog)
    except (Stuck, LocalError):
        return None


def _frozen(sys: RbSystem, m: RbMessage) -> bool:
    if not sys.has_pid(m.src):
        return False
    sender = sys.proc(m.src)
    if sender.forward:
        return False
    return any(isinstance(e, HSend) and e.tag == m.tag for e in sender.hist)


def _forward_choices(sys: RbSystem, p: RbProc) -> list[Choice]:
    out: list[Choice] = []
    step = _local(p, sys.prog)
    if step is not None:
        label = step[0]
        if isinstance(label, LRec):
            for i, m in enumerate(sys.msgs):
                if m.dst == p.pid and match_rec(label.clauses, m.val) is not None and not _frozen(sys, m):
                    out.append(Choice("rec", p.pid, i))
        else:
            rule = {LSeq: "seq", LSend: "send", LSpawn: "spawn", LCheck: "check",
                    LCommit: "commit", LRollback: "rollback"}[type(label)]
            out.append(Choice(rule, p.pid))
    for d in p.delayed:
        if last_active(d.tau, p.hist, p.chks | {d.tau}):
            out.append(Choice("delay", p.pid, d.tau.n))
    return out


def _backward_choice(sys: RbSystem, p: RbProc) -> Choice | None:
    tau = p.mode.target
    if tau not in p.chks or not p.hist:
        return None
    e = p.hist[0]
    if isinstance(e, HSend):
        if sys.floating(e.tag) is not None:
            return Choice("undo-send", p.pid)
        if not sys.has_pid(e.dest):
            return None
        q = sys.proc(e.dest)
        if q.forward and tau in q.chks and any(isinstance(x, HRec) and x.tag == e.tag for x in q.hist):
            return Choice("prop-send", p.pid)
        return None
    if isinstance(e, HSpawn):
        if not sys.has_pid(e.child):
            return None
        c = sys.proc(e.child)
        if c.forward:
            return Choice("prop-spawn", p.pid) if tau in c.chks else None
        if c.mode.target == tau and not c.hist and not c.delayed and c.state == _spawned_state(e.s, sys.prog):
            return Choice("undo-spawn", p.pid)
        return None
    return Choice("undo-" + entry_kind(e), p.pid)


def _spawned_state(s: LocalState, prog: Program) -> LocalState | None:
    try:
        label, _ = local_step(s, prog)
    except (Stuck, LocalError):
        return None
    return label.child if isinstance(label, LSpawn) else None


def rb_enabled(sys: RbSystem) -> list[Choice]:
    out: list[Choice] = []
    for p in sorted(sys.procs, key=lambda q: q.pid):
        if p.forward:
            out.extend(_forward_choices(sys, p))
        else:
            c = _backward_choice(sys, p)
            if c is not None:
                out.append(c)
    return out


# ---------------------------------------------------------------------------
# Steps
# ---------------------------------------------------------------------------


def _put(sys: RbSystem, *new: RbProc, **changes) -> RbSystem:
    table = {p.pid: p for p in new}
    procs = tuple(table.pop(p.pid, p) for p in sys.procs) + tuple(table.values())
    return replace(sys, procs=procs, **changes)


def _without_proc(sys: RbSystem, pid: Pid) -> tuple[RbProc, ...]:
    return tuple(p for p in sys.procs if p.pid != pid)


def rb_step(sys: RbSystem, c: Choice) -> tuple[Label, RbSystem]:
    if c not in rb_enabled(sys):
        raise NotEnabled(c)
    return _apply(sys, c)


def _apply(sys: RbSystem, c: Choice) -> tuple[Label, RbSystem]:
    p = sys.proc(c.pid)
    if c.rule in BACKWARD_RULES:
        return _backward(sys, p, c.rule)
    if c.rule == "delay":
        d = p.delayed_for(Tau(c.arg))
        p1 = replace(p, delayed=tuple(x for x in p.delayed if x is not d))
        return Label(p.pid, "fire", d.tau), propagate_commit(d.tau, d.deps, _put(sys, p1))
    label, s1 = local_step(p.state, sys.prog)
    s, C, h = p.state, p.chks, p.hist
    if isinstance(label, LSeq):
        return Label(p.pid, "seq"), _put(sys, replace(p, state=s1, hist=add_hist(C, HSeq(s), h)))
    if isinstance(label, LSend):
        tag, counters = sys.counters.fresh_tag()
        msg = RbMessage(C, p.pid, label.dest, tag, label.value)
        p1 = replace(p, state=s1, hist=add_hist(C, HSend(s, label.dest, tag), h))
        return Label(p.pid, "send", tag), _put(sys, p1, msgs=sys.msgs + (msg,), counters=counters)
    if isinstance(label, LRec):
        m = sys.msgs[c.arg]
        C2 = C | m.chks
        entry = HRec(m.chks - C, m.chks, s, m.src, m.tag, m.val)
        p1 = replace(p, state=bind_future(s1, match_rec(label.clauses, m.val)), chks=C2,
                     hist=add_hist(C2, entry, h))
        return Label(p.pid, "rec", m.tag), _put(sys, p1, msgs=sys.msgs[: c.arg] + sys.msgs[c.arg + 1 :])
    if isinstance(label, LSpawn):
        child, counters = sys.counters.fresh_pid()
        p1 = replace(p, state=bind_future(s1, PidVal(child)), hist=add_hist(C, HSpawn(s, child), h))
        kid = RbProc(child, label.child, C)
        return Label(p.pid, "spawn", child), _put(sys, p1, kid, counters=counters)
    if isinstance(label, LCheck):
        tau, counters = sys.counters.fresh_tau()
        p1 = replace(p, state=bind_future(s1, ChkVal(tau)), chks=C | {tau}, hist=(HCheck(tau, s),) + h)
        return Label(p.pid, "check", tau), _put(sys, p1, counters=counters)
    tau = label.tau
    if tau not in C:
        raise RuntimeFault(p.pid, tau, "commit" if isinstance(label, LCommit) else "rollback")
    if isinstance(label, LRollback):
        p1 = replace(p, state=s1, mode=Backward(tau, s1.pending))
        return Label(p.pid, "rollback", tau), _put(sys, p1)
    deps = _deps_or_all(tau, h)
    h1 = (HCommit(tau, s),) + h
    if last_active(tau, h, C):
        p1 = replace(p, state=s1, chks=C - {tau}, hist=h1)
        return Label(p.pid, "commit", tau), propagate_commit(tau, deps, _put(sys, p1))
    d = DelayedCommit(tau, h, deps)
    delayed = tuple(sorted(p.delayed + (d,), key=lambda x: x.tau))
    p1 = replace(p, state=s1, chks=C - {tau}, delayed=delayed, hist=h1)
    return Label(p.pid, "delay", tau), _put(sys, p1)


def _backward(sys: RbSystem, p: RbProc, rule: str) -> tuple[Label, RbSystem]:
    tau = p.mode.target
    e, h = p.hist[0], p.hist[1:]
    if rule == "undo-seq":
        return Label(p.pid, "~seq"), _put(sys, replace(p, state=e.s, hist=h))
    if rule == "undo-send":
        i = sys.floating(e.tag)
        p1 = replace(p, state=e.s, hist=h)
        return Label(p.pid, "~send", e.tag), _put(sys, p1, msgs=sys.msgs[:i] + sys.msgs[i + 1 :])
    if rule == "prop-send":
        q = sys.proc(e.dest)
        return Label(p.pid, "~send-prop", q.pid), _put(sys, replace(q, mode=Backward(tau)))
    if rule == "prop-spawn":
        q = sys.proc(e.child)
        return Label(p.pid, "~spawn-prop", q.pid), _put(sys, replace(q, mode=Backward(tau)))
    if rule == "undo-spawn":
        rest = _put(sys, replace(p, state=e.s, hist=h))
        return Label(p.pid, "~spawn", e.child), replace(rest, procs=_without_proc(rest, e.child))
    if rule == "undo-rec":
        msg = RbMessage(e.msg_chks, e.sender, p.pid, e.tag, e.val)
        mode = None if tau in e.forced else p.mode
        p1 = replace(p, state=e.s, hist=h, chks=p.chks - e.forced, mode=mode)
        return Label(p.pid, "~rec", e.tag), _put(sys, p1, msgs=sys.msgs + (msg,))
    if rule == "undo-check":
        chks = p.chks - {e.tau}
        if e.tau != tau:
            return Label(p.pid, "~check", e.tau), _put(sys, replace(p, state=e.s, hist=h, chks=chks))
        state = LocalState(e.s.env, p.mode.resume) if sys.handler else e.s
        p1 = replace(p, state=state, hist=h, chks=chks, mode=None)
        return Label(p.pid, "~check", e.tau), _put(sys, p1)
    # undo-commit: the commit either executed or is still delayed.
    delayed = tuple(d for d in p.delayed if d.tau != e.tau)
    p1 = replace(p, state=e.s, hist=h, chks=p.chks | {e.tau}, delayed=delayed)
    return Label(p.pid, "~commit", e.tau), _put(sys, p1)


def rb_successors(sys: RbSystem):
    """Yield ``(choice, label, successor)``; a faulting choice yields the fault instead."""
    for c in rb_enabled(sys):
        try:
            label, nxt = _apply(sys, c)
        except RuntimeFault as fault:
            yield c, None, fault
            continue
        yield c, label, nxt


def rb_status(sys: RbSystem, enabled: list[Choice] | None = None) -> str | None:
    """Terminal classification, or None while some choice is enabled."""
    if enabled is None:
        enabled = rb_enabled(sys)
    if enabled:
        return None
    if any(not p.forward for p in sys.procs):
        return "stuck-backward"
    return local_status([p.state for p in sys.procs], sys.prog)
