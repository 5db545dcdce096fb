"""Irreversible system semantics: processes plus floating messages."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import cached_property

from .ids import INITIAL_PID, Counters, Pid
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


class NotEnabled(Exception):
    """The requested choice is not enabled in the given system."""


@dataclass(frozen=True, order=True)
class Choice:
    """One rule instance: ``rule`` applied to process ``pid``.

    ``arg`` disambiguates: the message arrival index for receives, the
    checkpoint number for delayed commits, otherwise None.
    """

    rule: str
    pid: Pid
    arg: int | None = None

    @property
    def key(self) -> str:
        arg = "-" if self.arg is None else str(self.arg)
        return f"{self.rule}\t{self.pid}\t{arg}"

    @staticmethod
    def from_key(text: str) -> Choice:
        rule, pid, arg = text.split("\t")
        return Choice(rule, Pid(int(pid[1:])), None if arg == "-" else int(arg))


@dataclass(frozen=True)
class Label:
    pid: Pid
    action: str
    arg: object = None

    @property
    def text(self) -> str:
        if self.arg is None:
            return f"{self.pid},{self.action}"
        return f"{self.pid},{self.action}({self.arg})"

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class StdProc:
    pid: Pid
    state: LocalState

    @cached_property
    def text(self) -> str:
        return f"<@{self.pid},{self.state.text}>"


@dataclass(frozen=True)
class StdMessage:
    src: Pid
    dst: Pid
    val: Value

    @cached_property
    def text(self) -> str:
        return f"(@{self.src},@{self.dst},{self.val.text})"


@dataclass(frozen=True)
class StdSystem:
    procs: tuple[StdProc, ...]
    msgs: tuple[StdMessage, ...]
    prog: Program
    counters: Counters = field(default=Counters(), compare=False)

    def proc(self, pid: Pid) -> StdProc:
        for p in self.procs:
            if p.pid == pid:
                return p
        raise KeyError(pid)

    @cached_property
    def text(self) -> str:
        """Order-insensitive rendering: equal texts mean equal systems."""
        procs = sorted(self.procs, key=lambda p: p.pid)
        msgs = sorted(m.text for m in self.msgs)
        return " | ".join([p.text for p in procs] + msgs)


def std_initial(prog: Program) -> StdSystem:
    validate(prog, "standard")
    return StdSystem((StdProc(INITIAL_PID, prog.initial_state()),), (), prog)


def _put(procs: tuple[StdProc, ...], new: StdProc) -> tuple[StdProc, ...]:
    return tuple(new if p.pid == new.pid else p for p in procs)


def _try_local(state: LocalState, prog: Program):
    try:
        return local_step(state, prog)
    except (Stuck, LocalError):
        return None


def std_enabled(sys: StdSystem) -> list[Choice]:
    out: list[Choice] = []
    for p in sorted(sys.procs, key=lambda q: q.pid):
        step = _try_local(p.state, sys.prog)
        if step is None:
            continue
        label = step[0]
        if isinstance(label, LRec):
            for i, m in enumerate(sys.msgs):
                if m.dst == p.pid and match_rec(label.clauses, m.val) is not None:
                    out.append(Choice("rec", p.pid, i))
        elif isinstance(label, LSeq):
            out.append(Choice("seq", p.pid))
        elif isinstance(label, LSend):
            out.append(Choice("send", p.pid))
        elif isinstance(label, LSpawn):
            out.append(Choice("spawn", p.pid))
    return out


def std_step(sys: StdSystem, c: Choice) -> tuple[Label, StdSystem]:
    if c not in std_enabled(sys):
        raise NotEnabled(c)
    return _apply(sys, c)


def _apply(sys: StdSystem, c: Choice) -> tuple[Label, StdSystem]:
    p = sys.proc(c.pid)
    label, s1 = local_step(p.state, sys.prog)
    if c.rule == "seq":
        return Label(p.pid, "seq"), replace(sys, procs=_put(sys.procs, StdProc(p.pid, s1)))
    if c.rule == "send":
        msg = StdMessage(p.pid, label.dest, label.value)
        return Label(p.pid, "send"), replace(
            sys, procs=_put(sys.procs, StdProc(p.pid, s1)), msgs=sys.msgs + (msg,)
        )
    if c.rule == "rec":
        msg = sys.msgs[c.arg]
        s2 = bind_future(s1, match_rec(label.clauses, msg.val))
        msgs = sys.msgs[: c.arg] + sys.msgs[c.arg + 1 :]
        return Label(p.pid, "rec"), replace(sys, procs=_put(sys.procs, StdProc(p.pid, s2)), msgs=msgs)
    child, counters = sys.counters.fresh_pid()
    s2 = bind_future(s1, PidVal(child))
    procs = _put(sys.procs, StdProc(p.pid, s2)) + (StdProc(child, label.child),)
    return Label(p.pid, "spawn", child), replace(sys, procs=procs, counters=counters)


def std_successors(sys: StdSystem):
    for c in std_enabled(sys):
        label, nxt = _apply(sys, c)
        yield c, label, nxt


def std_status(sys: StdSystem, enabled: list[Choice] | None = None) -> str | None:
    if enabled is None:
        enabled = std_enabled(sys)
    if enabled:
        return None
    return local_status([p.state for p in sys.procs], sys.prog)
