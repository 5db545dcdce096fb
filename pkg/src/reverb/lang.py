"""The mini actor language: values, patterns, statements, local states.

Also holds the local small-step relation (``local_step``), selective-receive
matching (``match_rec``), future binding (``bind_future``) and the program
parser.  Everything here is an immutable value.

Every node exposes a ``text`` rendering.  Identifiers minted by the engines
appear in it as ``@p3``, ``@t1``, ``@l7`` so canonical forms can rename them.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Union

from .ids import Pid, Tau


class SemanticsError(Exception):
    pass


class Stuck(SemanticsError):
    """The local state cannot take a step on its own."""


class LocalError(SemanticsError):
    """The head statement is ill-formed in the current environment."""


class ParseError(SemanticsError):
    def __init__(self, message: str, line: int = 0, col: int = 0):
        self.line = line
        self.col = col
        where = f"{line}:{col}: " if line else ""
        super().__init__(where + message)


# ---------------------------------------------------------------------------
# Values
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Atom:
    name: str

    @cached_property
    def text(self) -> str:
        return self.name


@dataclass(frozen=True)
class Int:
    n: int

    @cached_property
    def text(self) -> str:
        return str(self.n)


@dataclass(frozen=True)
class Tup:
    elems: tuple[Value, ...]

    @cached_property
    def text(self) -> str:
        return "{" + ",".join(e.text for e in self.elems) + "}"


@dataclass(frozen=True)
class PidVal:
    pid: Pid

    @cached_property
    def text(self) -> str:
        return f"@{self.pid}"


@dataclass(frozen=True)
class ChkVal:
    tau: Tau

    @cached_property
    def text(self) -> str:
        return f"@{self.tau}"


Value = Union[Atom, Int, Tup, PidVal, ChkVal]

OK = Atom("ok")


def pretty(text: str) -> str:
    return text.replace("@", "")


# ---------------------------------------------------------------------------
# Expressions and patterns
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Var:
    name: str

    @cached_property
    def text(self) -> str:
        return self.name


@dataclass(frozen=True)
class Lit:
    value: Value

    @cached_property
    def text(self) -> str:
        return self.value.text


@dataclass(frozen=True)
class TupExpr:
    elems: tuple[Expr, ...]

    @cached_property
    def text(self) -> str:
        return "{" + ",".join(e.text for e in self.elems) + "}"


Expr = Union[Var, Lit, TupExpr]


@dataclass(frozen=True)
class Wild:
    @cached_property
    def text(self) -> str:
        return "_"


@dataclass(frozen=True)
class PVar:
    name: str

    @cached_property
    def text(self) -> str:
        return self.name


@dataclass(frozen=True)
class PLit:
    value: Value

    @cached_property
    def text(self) -> str:
        return self.value.text


@dataclass(frozen=True)
class PTup:
    elems: tuple[Pattern, ...]

    @cached_property
    def text(self) -> str:
        return "{" + ",".join(e.text for e in self.elems) + "}"


Pattern = Union[Wild, PVar, PLit, PTup]


# ---------------------------------------------------------------------------
# Statements
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SpawnAssign:
    target: str
    proc: str

    @cached_property
    def text(self) -> str:
        return f"{self.target}=spawn {self.proc}"


@dataclass(frozen=True)
class Send:
    dest: Expr
    payload: Expr

    @cached_property
    def text(self) -> str:
        return f"send {self.dest.text},{self.payload.text}"


@dataclass(frozen=True)
class Clause:
    pattern: Pattern
    body: tuple[Statement, ...]

    @cached_property
    def text(self) -> str:
        return f"|{self.pattern.text}->" + seq_text(self.body)


@dataclass(frozen=True)
class Receive:
    clauses: tuple[Clause, ...]

    @cached_property
    def text(self) -> str:
        return "receive" + "".join(c.text for c in self.clauses) + " end"


@dataclass(frozen=True)
class CheckAssign:
    target: str

    @cached_property
    def text(self) -> str:
        return f"{self.target}=check"


@dataclass(frozen=True)
class Commit:
    arg: Expr

    @cached_property
    def text(self) -> str:
        return f"commit({self.arg.text})"


@dataclass(frozen=True)
class Rollback:
    arg: Expr

    @cached_property
    def text(self) -> str:
        return f"rollback({self.arg.text})"


@dataclass(frozen=True)
class SeqOp:
    tag: str

    @cached_property
    def text(self) -> str:
        return f"seq {self.tag}"


Statement = Union[SpawnAssign, Send, Receive, CheckAssign, Commit, Rollback, SeqOp]
OPERATORS = (CheckAssign, Commit, Rollback)


def seq_text(stmts: tuple[Statement, ...]) -> str:
    return ";".join(s.text for s in stmts)


# ---------------------------------------------------------------------------
# Local states and labels
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Slot:
    """An unfilled future: ``spawn``/``check`` bind ``target``; ``rec`` selects a clause."""

    kind: str
    target: str | None = None
    clauses: tuple[Clause, ...] = ()

    @cached_property
    def text(self) -> str:
        if self.kind == "rec":
            return "?rec"
        return f"?{self.kind}:{self.target}"


@dataclass(frozen=True)
class LocalState:
    env: tuple[tuple[str, Value], ...] = ()
    pending: tuple[Statement, ...] = ()
    slot: Slot | None = None

    @staticmethod
    def make(env: Mapping[str, Value], pending) -> LocalState:
        return LocalState(tuple(sorted(env.items())), tuple(pending))

    @cached_property
    def env_map(self) -> dict[str, Value]:
        return dict(self.env)

    def lookup(self, name: str) -> Value:
        try:
            return self.env_map[name]
        except KeyError:
            raise LocalError(f"unbound variable {name}") from None

    def bind(self, name: str, value: Value) -> tuple[tuple[str, Value], ...]:
        if name in self.env_map:
            raise LocalError(f"variable {name} is already bound")
        return tuple(sorted(self.env + ((name, value),)))

    @property
    def head(self) -> Statement | None:
        return self.pending[0] if self.pending else None

    @cached_property
    def text(self) -> str:
        env = ",".join(f"{k}:{v.text}" for k, v in self.env)
        slot = "" if self.slot is None else " " + self.slot.text
        return f"<{env}|{seq_text(self.pending)}{slot}>"


@dataclass(frozen=True)
class LSeq:
    pass


@dataclass(frozen=True)
class LSend:
    dest: Pid
    value: Value


@dataclass(frozen=True)
class LRec:
    clauses: tuple[Clause, ...]


@dataclass(frozen=True)
class LSpawn:
    proc: str
    child: LocalState


@dataclass(frozen=True)
class LCheck:
    pass


@dataclass(frozen=True)
class LCommit:
    tau: Tau


@dataclass(frozen=True)
class LRollback:
    tau: Tau


LocalLabel = Union[LSeq, LSend, LRec, LSpawn, LCheck, LCommit, LRollback]


# ---------------------------------------------------------------------------
# Programs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Program:
    procs: tuple[tuple[str, tuple[Statement, ...]], ...]
    source: str = field(default="", compare=False)

    @cached_property
    def table(self) -> dict[str, tuple[Statement, ...]]:
        return dict(self.procs)

    def body(self, name: str) -> tuple[Statement, ...]:
        try:
            return self.table[name]
        except KeyError:
            raise LocalError(f"unknown proc {name}") from None

    @property
    def names(self) -> list[str]:
        return [n for n, _ in self.procs]

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.source.encode()).hexdigest()

    def has_operators(self) -> bool:
        return any(_has_ops(body) for _, body in self.procs)

    def initial_state(self) -> LocalState:
        return LocalState((), self.body("main"))

    @cached_property
    def erased(self) -> Program:
        procs = tuple((n, _erase_seq(b, {})) for n, b in self.procs)
        return Program(procs, source=render_program(procs))


def _stmt_source(st: Statement) -> str:
    if isinstance(st, Receive):
        clauses = " ".join(
            " ".join([f"| {c.pattern.text} ->"] + [_stmt_source(b) for b in c.body]) for c in st.clauses
        )
        return f"receive {clauses} end"
    if isinstance(st, Send):
        return f"send {st.dest.text}, {st.payload.text}"
    if isinstance(st, SpawnAssign):
        return f"{st.target} = spawn {st.proc}"
    if isinstance(st, CheckAssign):
        return f"{st.target} = check"
    return st.text


def render_program(procs: tuple[tuple[str, tuple[Statement, ...]], ...]) -> str:
    """Parseable source text for ``procs``."""
    blocks = []
    for name, body in procs:
        blocks.append("\n".join([f"proc {name}:"] + ["  " + _stmt_source(st) for st in body] + ["end"]))
    return "\n\n".join(blocks) + "\n"


def _has_ops(stmts) -> bool:
    for st in stmts:
        if isinstance(st, OPERATORS):
            return True
        if isinstance(st, Receive) and any(_has_ops(c.body) for c in st.clauses):
            return True
    return False


# ---------------------------------------------------------------------------
# Evaluation, matching and the local step
# ---------------------------------------------------------------------------


def eval_expr(e: Expr, s: LocalState) -> Value:
    if isinstance(e, Lit):
        return e.value
    if isinstance(e, Var):
        return s.lookup(e.name)
    return Tup(tuple(eval_expr(x, s) for x in e.elems))


def _resolve_pattern(p: Pattern, env: dict[str, Value]) -> Pattern:
    # A variable that is already bound acts as a literal.
    if isinstance(p, PVar) and p.name in env:
        return PLit(env[p.name])
    if isinstance(p, PTup):
        return PTup(tuple(_resolve_pattern(x, env) for x in p.elems))
    return p


def match_pattern(p: Pattern, v: Value, out: dict[str, Value]) -> bool:
    if isinstance(p, Wild):
        return True
    if isinstance(p, PVar):
        if p.name in out:
            return out[p.name] == v
        out[p.name] = v
        return True
    if isinstance(p, PLit):
        return p.value == v
    if not isinstance(v, Tup) or len(v.elems) != len(p.elems):
        return False
    return all(match_pattern(pe, ve, out) for pe, ve in zip(p.elems, v.elems))


def match_rec(clauses, v: Value) -> tuple[int, dict[str, Value]] | None:
    """First clause whose pattern matches ``v``, with its bindings; None if none does."""
    for i, cl in enumerate(clauses):
        out: dict[str, Value] = {}
        if match_pattern(cl.pattern, v, out):
            return i, out
    return None


def local_step(s: LocalState, prog: Program) -> tuple[LocalLabel, LocalState]:
    if s.slot is not None:
        raise LocalError("state still holds an unfilled future")
    if not s.pending:
        raise Stuck("no pending statements")
    head, rest = s.pending[0], s.pending[1:]
    if isinstance(head, SeqOp):
        return LSeq(), LocalState(s.env, rest)
    if isinstance(head, Send):
        dest = eval_expr(head.dest, s)
        if not isinstance(dest, PidVal):
            raise LocalError(f"send destination {dest.text} is not a pid")
        return LSend(dest.pid, eval_expr(head.payload, s)), LocalState(s.env, rest)
    if isinstance(head, Receive):
        env = s.env_map
        clauses = tuple(Clause(_resolve_pattern(c.pattern, env), c.body) for c in head.clauses)
        return LRec(clauses), LocalState(s.env, rest, Slot("rec", clauses=clauses))
    if isinstance(head, SpawnAssign):
        if head.target in s.env_map:
            raise LocalError(f"variable {head.target} is already bound")
        child = LocalState((), prog.body(head.proc))
        return LSpawn(head.proc, child), LocalState(s.env, rest, Slot("spawn", head.target))
    if isinstance(head, CheckAssign):
        if head.target in s.env_map:
            raise LocalError(f"variable {head.target} is already bound")
        return LCheck(), LocalState(s.env, rest, Slot("check", head.target))
    v = eval_expr(head.arg, s)
    if not isinstance(v, ChkVal):
        raise LocalError(f"{type(head).__name__.lower()} argument {v.text} is not a checkpoint")
    label = LCommit(v.tau) if isinstance(head, Commit) else LRollback(v.tau)
    return label, LocalState(s.env, rest)


def bind_future(s: LocalState, v) -> LocalState:
    """Fill the pending future of ``s``.

    ``v`` is a Value for spawn/check slots and a ``(index, bindings)`` pair,
    as returned by :func:`match_rec`, for receive slots.
    """
    slot = s.slot
    if slot is None:
        raise LocalError("no pending future")
    if slot.kind == "rec":
        index, bindings = v
        env = s.env_map
        for name in bindings:
            if name in env:
                raise LocalError(f"variable {name} is already bound")
        merged = dict(env)
        merged.update(bindings)
        body = slot.clauses[index].body
        return LocalState(tuple(sorted(merged.items())), body + s.pending)
    return LocalState(s.bind(slot.target, v), s.pending)


def local_status(states: list[LocalState], prog: Program) -> str:
    """``final``, ``deadlock``, or ``runtime-fault`` if some head statement is ill-formed."""
    for s in states:
        try:
            local_step(s, prog)
        except LocalError:
            return "runtime-fault"
        except Stuck:
            pass
    return "final" if all(not s.pending for s in states) else "deadlock"


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

_TOKEN = re.compile(
    r"(?P<ws>[ \t\r]+)|(?P<nl>\n)|(?P<comment>#[^\n]*)"
    r"|(?P<int>-?\d+)|(?P<var>[A-Z][A-Za-z0-9_]*)|(?P<name>[a-z][A-Za-z0-9_]*)"
    r"|(?P<arrow>->)|(?P<punct>[:=,{}()|_])"
)

_KEYWORDS = {"proc", "end", "spawn", "send", "receive", "check", "commit", "rollback", "seq"}


@dataclass
class _Tok:
    kind: str
    text: str
    line: int
    col: int


def _tokenize(text: str) -> list[_Tok]:
    toks: list[_Tok] = []
    pos, line, line_start = 0, 1, 0
    while pos < len(text):
        m = _TOKEN.match(text, pos)
        if m is None:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            value = m.group()
            if kind == "name" and value in _KEYWORDS:
                kind = "kw"
            elif kind in ("arrow", "punct"):
                kind = value
            toks.append(_Tok(kind, value, line, m.start() - line_start + 1))
        pos = m.end()
    toks.append(_Tok("eof", "", line, pos - line_start + 1))
    return toks


class _Parser:
    def __init__(self, text: str):
        self.toks = _tokenize(text)
        self.i = 0

    @property
    def tok(self) -> _Tok:
        return self.toks[self.i]

    def error(self, what: str):
        t = self.tok
        found = t.text or "end of input"
        raise ParseError(f"expected {what}, found {found!r}", t.line, t.col)

    def accept(self, kind: str, text: str | None = None) -> _Tok | None:
        t = self.tok
        if t.kind == kind and (text is None or t.text == text):
            self.i += 1
            return t
        return None

    def expect(self, kind: str, text: str | None = None) -> _Tok:
        t = self.accept(kind, text)
        if t is None:
            self.error(text or kind)
        return t

    def program(self) -> list[tuple[str, tuple[Statement, ...], _Tok]]:
        procs = []
        while self.tok.kind != "eof":
            start = self.expect("kw", "proc")
            name = self.expect("name").text
            self.expect(":")
            body = self.stmts()
            self.expect("kw", "end")
            procs.append((name, body, start))
        return procs

    def stmts(self) -> tuple[Statement, ...]:
        out = []
        while not (self.tok.kind in ("|", "eof") or (self.tok.kind == "kw" and self.tok.text == "end")):
            out.append(self.stmt())
        return tuple(out)

    def stmt(self) -> Statement:
        t = self.tok
        if t.kind == "var":
            self.i += 1
            self.expect("=")
            if self.accept("kw", "spawn"):
                return SpawnAssign(t.text, self.expect("name").text)
            if self.accept("kw", "check"):
                return CheckAssign(t.text)
            self.error("spawn or check")
        if self.accept("kw", "send"):
            dest = self.expr()
            self.expect(",")
            return Send(dest, self.expr())
        if self.accept("kw", "receive"):
            clauses = []
            while self.accept("|"):
                pat = self.pattern()
                _check_linear(pat, self.toks[self.i - 1])
                self.expect("->")
                clauses.append(Clause(pat, self.stmts()))
            if not clauses:
                self.error("'|'")
            self.expect("kw", "end")
            return Receive(tuple(clauses))
        for kw, cls in (("commit", Commit), ("rollback", Rollback)):
            if self.accept("kw", kw):
                self.expect("(")
                arg = self.expr()
                self.expect(")")
                return cls(arg)
        if self.accept("kw", "seq"):
            return SeqOp(self.expect("name").text)
        self.error("statement")

    def expr(self) -> Expr:
        t = self.tok
        if self.accept("var"):
            return Var(t.text)
        if self.accept("name") or self.accept("kw"):
            return Lit(Atom(t.text))
        if self.accept("int"):
            return Lit(Int(int(t.text)))
        if self.accept("{"):
            elems = [self.expr()]
            while self.accept(","):
                elems.append(self.expr())
            self.expect("}")
            return TupExpr(tuple(elems))
        self.error("expression")

    def pattern(self) -> Pattern:
        t = self.tok
        if self.accept("_"):
            return Wild()
        if self.accept("var"):
            return PVar(t.text)
        if self.accept("name") or self.accept("kw"):
            return PLit(Atom(t.text))
        if self.accept("int"):
            return PLit(Int(int(t.text)))
        if self.accept("{"):
            elems = [self.pattern()]
            while self.accept(","):
                elems.append(self.pattern())
            self.expect("}")
            return PTup(tuple(elems))
        self.error("pattern")


def _pattern_vars(p: Pattern) -> list[str]:
    if isinstance(p, PVar):
        return [p.name]
    if isinstance(p, PTup):
        return [n for e in p.elems for n in _pattern_vars(e)]
    return []


def _check_linear(p: Pattern, tok: _Tok) -> None:
    names = _pattern_vars(p)
    if len(names) != len(set(names)):
        raise ParseError("variable repeated in pattern", tok.line, tok.col)


def parse_program(text: str) -> Program:
    procs = _Parser(text).program()
    seen: dict[str, tuple] = {}
    for name, body, tok in procs:
        if name in seen:
            raise ParseError(f"duplicate proc {name}", tok.line, tok.col)
        seen[name] = body
    if "main" not in seen:
        raise ParseError("missing main")
    for name, body, tok in procs:
        for target in _spawned(body):
            if target not in seen:
                raise ParseError(f"proc {name} spawns unknown proc {target}", tok.line, tok.col)
    ordered = [("main", seen["main"])] + [(n, b) for n, b, _ in procs if n != "main"]
    return Program(tuple(ordered), source=text)


def _spawned(stmts):
    for st in stmts:
        if isinstance(st, SpawnAssign):
            yield st.proc
        elif isinstance(st, Receive):
            for c in st.clauses:
                yield from _spawned(c.body)


def _escaping_check_vars(stmts, outer_uses: set[str]) -> list[str]:
    """Checkpoint variables bound inside a clause body but read after the receive."""
    bad = []
    for i, st in enumerate(stmts):
        if isinstance(st, Receive):
            later = _vars_read(stmts[i + 1:]) | outer_uses
            for c in st.clauses:
                for inner in c.body:
                    if isinstance(inner, CheckAssign) and inner.target in later:
                        bad.append(inner.target)
                bad += _escaping_check_vars(c.body, later)
    return bad


def _vars_read(stmts) -> set[str]:
    out: set[str] = set()

    def expr(e):
        if isinstance(e, Var):
            out.add(e.name)
        elif isinstance(e, TupExpr):
            for x in e.elems:
                expr(x)

    for st in stmts:
        if isinstance(st, Send):
            expr(st.dest)
            expr(st.payload)
        elif isinstance(st, (Commit, Rollback)):
            expr(st.arg)
        elif isinstance(st, Receive):
            for c in st.clauses:
                out.update(_pattern_vars(c.pattern))
                out.update(_vars_read(c.body))
    return out


def validate(prog: Program, semantics: str) -> None:
    """Static checks per semantics; raises ParseError."""
    if semantics in ("standard", "reversible") and prog.has_operators():
        raise ParseError(f"{semantics} semantics has no rules for check/commit/rollback")
    if semantics == "rollback":
        for name, body in prog.procs:
            bad = _escaping_check_vars(body, set())
            if bad:
                raise ParseError(f"proc {name}: checkpoint variable {bad[0]} escapes its receive clause")


# ---------------------------------------------------------------------------
# Operator erasure and closure
# ---------------------------------------------------------------------------


def erase_value(v: Value) -> Value:
    if isinstance(v, ChkVal):
        return OK
    if isinstance(v, Tup):
        return Tup(tuple(erase_value(x) for x in v.elems))
    return v


def _subst_expr(e: Expr, env: Mapping[str, Value]) -> Expr:
    if isinstance(e, Var):
        return Lit(env[e.name]) if e.name in env else e
    if isinstance(e, Lit):
        return Lit(erase_value(e.value))
    return TupExpr(tuple(_subst_expr(x, env) for x in e.elems))


def _subst_pattern(p: Pattern, env: Mapping[str, Value]) -> Pattern:
    if isinstance(p, PVar):
        return PLit(env[p.name]) if p.name in env else p
    if isinstance(p, PLit):
        return PLit(erase_value(p.value))
    if isinstance(p, PTup):
        return PTup(tuple(_subst_pattern(x, env) for x in p.elems))
    return p


def _erase_seq(stmts, env: Mapping[str, Value]) -> tuple[Statement, ...]:
    """Drop operators, substitute ``env`` and ``ok`` for checkpoint variables."""
    out: list[Statement] = []
    env = dict(env)
    for st in stmts:
        if isinstance(st, CheckAssign):
            env[st.target] = OK
        elif isinstance(st, (Commit, Rollback)):
            continue
        elif isinstance(st, Send):
            out.append(Send(_subst_expr(st.dest, env), _subst_expr(st.payload, env)))
        elif isinstance(st, Receive):
            out.append(Receive(tuple(
                Clause(_subst_pattern(c.pattern, env), _erase_seq(c.body, env)) for c in st.clauses
            )))
        else:
            out.append(st)
    return tuple(out)


def erase_program(prog: Program) -> Program:
    return prog.erased


def sbar(s: LocalState) -> LocalState:
    """Operator-free, closed form of a local state.

    Checkpoint values become ``ok``, check/commit/rollback statements vanish
    and the environment is substituted into the pending statements.
    """
    if s.slot is not None:
        raise LocalError("cannot project a state with an unfilled future")
    env = {k: erase_value(v) for k, v in s.env}
    return LocalState((), _erase_seq(s.pending, env))
