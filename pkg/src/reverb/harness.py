"""Schedulers, runs and traces, bounded exploration, program generation."""

from __future__ import annotations

import random
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

from . import conformance as cf
from .ids import Counters, Tag
from .lang import Program, parse_program
from .reversible import _apply as rev_apply, rev_enabled, rev_initial, rev_status
from .rollback import (
    BACKWARD_RULES,
    RuntimeFault,
    _apply as rb_apply,
    rb_enabled,
    rb_initial,
    rb_status,
)
from .standard import Choice, Label, _apply as std_apply, std_enabled, std_initial, std_status

TRACE_VERSION = "1"
STATUSES = ("final", "deadlock", "max-steps", "stuck-backward", "runtime-fault")


# ---------------------------------------------------------------------------
# Engines
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Engine:
    name: str
    initial: Callable[[Program, bool], object]
    enabled: Callable[[object], list[Choice]]
    apply: Callable[[object, Choice], tuple[Label, object]]
    status: Callable[[object, list[Choice]], str | None]


ENGINES = {
    "standard": Engine("standard", lambda p, h: std_initial(p), std_enabled, std_apply, std_status),
    "rollback": Engine("rollback", rb_initial, rb_enabled, rb_apply, rb_status),
    "reversible": Engine("reversible", lambda p, h: rev_initial(p), rev_enabled, rev_apply, rev_status),
}


def engine(semantics: str) -> Engine:
    try:
        return ENGINES[semantics]
    except KeyError:
        raise ValueError(f"unknown semantics {semantics!r}") from None


# ---------------------------------------------------------------------------
# Scheduling policies
# ---------------------------------------------------------------------------


class ScriptDiverged(Exception):
    def __init__(self, index: int, key: str):
        self.index = index
        super().__init__(f"scripted choice {index} ({key!r}) is not enabled")


class Policy:
    name = "policy"

    def select(self, sys, enabled: list[Choice], index: int) -> Choice | None:
        raise NotImplementedError


@dataclass
class Scripted(Policy):
    keys: list[str]
    name: str = "script"
    # Replaying a forward-only run: exhaustion with no forward choice is a normal stop.
    forward_only: bool = False

    def select(self, sys, enabled, index):
        if index >= len(self.keys):
            return None
        for c in enabled:
            if c.key == self.keys[index]:
                return c
        raise ScriptDiverged(index, self.keys[index])

    @staticmethod
    def parse(text: str) -> Scripted:
        """One choice per line: ``rule pid [arg]``; blank lines and ``#`` comments skipped."""
        keys = []
        for line in text.splitlines():
            line = line.split("#", 1)[0].split()
            if line:
                arg = line[2] if len(line) > 2 else "-"
                keys.append(f"{line[0]}\t{line[1]}\t{arg}")
        return Scripted(keys)


@dataclass
class SeededRandom(Policy):
    seed: int
    name: str = "random"
    rng: random.Random = field(init=False, repr=False)

    def __post_init__(self):
        self.rng = random.Random(self.seed)

    def select(self, sys, enabled, index):
        return self.rng.choice(enabled) if enabled else None


def _message_order(sys, c: Choice) -> int:
    """Lowest tag first; arrival index for untagged messages."""
    if c.rule != "rec":
        return 0
    tag = getattr(sys.msgs[c.arg], "tag", None)
    return tag.n if isinstance(tag, Tag) else c.arg


@dataclass
class PriorityDefault(Policy):
    """Backward before delay before forward; round-robin over pids inside a class.

    The round-robin cursor makes the policy fair: a process that stays
    enabled is picked within one sweep over the pids.  Under the reversible
    semantics only forward choices are taken.
    """

    forward_only: bool = False
    name: str = "default"
    last: int = 0

    def select(self, sys, enabled, index):
        if self.forward_only:
            enabled = [c for c in enabled if not c.rule.startswith("undo-")]
        if not enabled:
            return None
        for cls in (BACKWARD_RULES, ("delay",)):
            picked = [c for c in enabled if c.rule in cls]
            if picked:
                break
        else:
            picked = enabled
        after = [c for c in picked if c.pid.n > self.last]
        pool = after or picked
        first = min(c.pid.n for c in pool)
        best = min((c for c in pool if c.pid.n == first), key=lambda c: _message_order(sys, c))
        self.last = best.pid.n
        return best


def make_policy(spec: str, seed: int = 0, semantics: str = "rollback") -> Policy:
    if spec == "default":
        return PriorityDefault(forward_only=semantics == "reversible")
    if spec == "random":
        return SeededRandom(seed)
    if spec.startswith("script:"):
        return Scripted.parse(Path(spec[len("script:"):]).read_text())
    raise ValueError(f"unknown policy {spec!r}")


# ---------------------------------------------------------------------------
# Runs and traces
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Record:
    index: int
    choice: Choice
    label: str
    minted: tuple[str, ...]

    @property
    def line(self) -> str:
        arg = "-" if self.choice.arg is None else str(self.choice.arg)
        minted = ",".join(self.minted) or "-"
        return f"{self.index}\t{self.choice.rule}\t{self.choice.pid}\t{arg}\t{self.label}\t{minted}"


@dataclass
class Trace:
    program: Program
    semantics: str
    policy: str
    seed: int
    mode: str
    max_steps: int
    records: list[Record] = field(default_factory=list)
    systems: list = field(default_factory=list)
    labels: list[Label] = field(default_factory=list)
    status: str = "final"
    fault: str | None = None
    # The choice that raised the fault; it has no record but replay needs it.
    fault_choice: Choice | None = None
    snapshots: bool = False

    @property
    def initial(self):
        return self.systems[0]

    @property
    def final(self):
        return self.systems[-1]

    def derivation(self) -> cf.Derivation:
        steps = tuple(
            cf.Step(r.choice, lab, sys)
            for r, lab, sys in zip(self.records, self.labels, self.systems[1:])
        )
        return cf.Derivation(self.systems[0], steps, self.semantics)

    def header_lines(self) -> list[str]:
        lines = [
            f"#reverb-trace\t{TRACE_VERSION}",
            f"#semantics\t{self.semantics}",
            f"#policy\t{self.policy}",
            f"#seed\t{self.seed}",
            f"#mode\t{self.mode}",
            f"#max-steps\t{self.max_steps}",
            f"#program-sha256\t{self.program.digest}",
        ]
        for line in self.program.source.split("\n"):
            lines.append("#program\t" + line.replace("\\", "\\\\").replace("\t", "\\t"))
        return lines

    def render(self) -> str:
        out = self.header_lines()
        for i, rec in enumerate(self.records):
            out.append(rec.line)
            if self.snapshots:
                out.append(f"@\t{i}\t{self.systems[i + 1].text}")
        if self.fault_choice is not None:
            out.append(f"#fault\t{self.fault_choice.key}")
        out.append(f"#status\t{self.status}")
        return "\n".join(out) + "\n"


def _minted(before: Counters, after: Counters) -> tuple[str, ...]:
    return tuple(str(x) for x in after.minted_since(before))


def run(
    prog: Program,
    semantics: str = "rollback",
    policy: Policy | None = None,
    max_steps: int = 1000,
    mode: str = "faithful",
    seed: int = 0,
    snapshots: bool = False,
) -> Trace:
    """Step ``prog`` to termination or ``max_steps``; RuntimeFault ends the run with that status."""
    if mode not in ("faithful", "handler"):
        raise ValueError(f"unknown mode {mode!r}")
    eng = engine(semantics)
    if policy is None:
        policy = PriorityDefault(forward_only=semantics == "reversible")
    sys = eng.initial(prog, mode == "handler")
    trace = Trace(prog, semantics, policy.name, seed, mode, max_steps, systems=[sys], snapshots=snapshots)
    for index in range(max_steps):
        enabled = eng.enabled(sys)
        choice = policy.select(sys, enabled, index)
        if choice is None:
            status = eng.status(sys, enabled)
            if status is None:
                # The policy declined enabled choices: a forward-only stop ends
                # the run normally, an exhausted script cuts it short.
                forward_left = any(not c.rule.startswith("undo-") for c in enabled)
                forward_stop = getattr(policy, "forward_only", False) and not forward_left
                status = eng.status(sys, []) if forward_stop else "max-steps"
            trace.status = status
            return trace
        try:
            label, nxt = eng.apply(sys, choice)
        except RuntimeFault as fault:
            trace.status = "runtime-fault"
            trace.fault = str(fault)
            trace.fault_choice = choice
            return trace
        trace.records.append(Record(index, choice, label.text, _minted(sys.counters, nxt.counters)))
        trace.labels.append(label)
        trace.systems.append(nxt)
        sys = nxt
    enabled = eng.enabled(sys)
    trace.status = eng.status(sys, enabled) or "max-steps"
    return trace


class TraceFormatError(Exception):
    pass


@dataclass
class ParsedTrace:
    header: dict[str, str]
    program_text: str
    records: list[list[str]]
    status: str


def parse_trace(text: str) -> ParsedTrace:
    header: dict[str, str] = {}
    program: list[str] = []
    records: list[list[str]] = []
    status = None
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for n, line in enumerate(lines, 1):
        if line.startswith("#program\t"):
            raw = line[len("#program\t"):]
            program.append(re.sub(r"\\(.)", lambda m: "\t" if m.group(1) == "t" else m.group(1), raw))
        elif line.startswith("#status\t"):
            status = line.split("\t", 1)[1]
        elif line.startswith("#"):
            key, _, value = line[1:].partition("\t")
            header[key] = value
        elif line.startswith("@\t"):
            continue
        else:
            fields = line.split("\t")
            if len(fields) != 6:
                raise TraceFormatError(f"line {n}: expected 6 fields, found {len(fields)}")
            records.append(fields)
    if header.get("reverb-trace") != TRACE_VERSION:
        raise TraceFormatError("missing or unsupported #reverb-trace header")
    for key in ("semantics", "mode", "max-steps", "program-sha256"):
        if key not in header:
            raise TraceFormatError(f"missing #{key} header")
    if status not in STATUSES:
        raise TraceFormatError("missing or unknown #status line")
    return ParsedTrace(header, "\n".join(program), records, status)


@dataclass
class VerifyResult:
    divergence: int | None = None
    message: str = ""
    verdicts: dict[str, cf.Verdict] = field(default_factory=dict)
    status: str | None = None

    @property
    def passed(self) -> bool:
        return self.divergence is None and all(v.passed for v in self.verdicts.values())


def verify(trace_text: str) -> VerifyResult:
    """Replay a trace's choices, compare record by record, then run the checkers."""
    parsed = parse_trace(trace_text)
    prog = parse_program(parsed.program_text)
    if prog.digest != parsed.header["program-sha256"]:
        raise TraceFormatError("program digest does not match the embedded program")
    keys = [f"{r[1]}\t{r[2]}\t{r[3]}" for r in parsed.records]
    if "fault" in parsed.header:
        keys.append(parsed.header["fault"])
    semantics = parsed.header["semantics"]
    policy = Scripted(keys, forward_only=semantics == "reversible" and parsed.header.get("policy") == "default")
    try:
        replay = run(prog, semantics, policy, int(parsed.header["max-steps"]),
                     parsed.header["mode"], int(parsed.header.get("seed", "0")))
    except ScriptDiverged as err:
        return VerifyResult(err.index, str(err))
    for i, fields in enumerate(parsed.records):
        if i >= len(replay.records) or replay.records[i].line.split("\t") != fields:
            return VerifyResult(i, f"record {i} differs on replay")
    if len(replay.records) != len(parsed.records):
        return VerifyResult(len(parsed.records), "replay produced extra records")
    if replay.status != parsed.status:
        return VerifyResult(len(parsed.records), f"status {parsed.status} replayed as {replay.status}")
    result = VerifyResult(status=replay.status)
    if replay.semantics == "rollback" and parsed.header["mode"] == "faithful":
        result.verdicts = cf.check_all(replay.derivation())
    return result


# ---------------------------------------------------------------------------
# Canonical keys
# ---------------------------------------------------------------------------

_ID = re.compile(r"@([ptl])(\d+)")
_TAGS = re.compile(r"@l\d+")


def rename_ids(text: str) -> str:
    """Alpha-rename ``@p``/``@t``/``@l`` tokens by order of first occurrence."""
    table: dict[str, str] = {}
    counts = {"p": 0, "t": 0, "l": 0}

    def sub(m: re.Match) -> str:
        tok = m.group(0)
        if tok not in table:
            kind = m.group(1)
            counts[kind] += 1
            table[tok] = f"@{kind}{counts[kind]}"
        return table[tok]

    return _ID.sub(sub, text)


def canonical_key(sys, extra: str = "") -> str:
    procs = sorted(sys.procs, key=lambda p: p.pid)
    msgs = sorted((m.text for m in sys.msgs), key=lambda t: (_TAGS.sub("@l", t), t))
    return rename_ids(" | ".join([p.text for p in procs] + msgs) + extra)


# ---------------------------------------------------------------------------
# Exploration
# ---------------------------------------------------------------------------

CHECK_NAMES = ("wellformed", "conservative", "soundness", "lemma")


@dataclass
class ExploreReport:
    semantics: str
    depth: int
    states: int = 0
    derivations: int = 0
    violations: dict[str, int] = field(default_factory=dict)
    faults: int = 0
    counterexamples: list[str] = field(default_factory=list)
    truncated: bool = False

    @property
    def passed(self) -> bool:
        return not any(self.violations.values())

    def render(self) -> str:
        lines = [
            f"semantics\t{self.semantics}",
            f"depth\t{self.depth}",
            f"states\t{self.states}",
            f"derivations\t{self.derivations}",
            f"faults\t{self.faults}",
            f"truncated\t{str(self.truncated).lower()}",
        ]
        for name in sorted(self.violations):
            lines.append(f"violations\t{name}\t{self.violations[name]}")
        for i, ce in enumerate(self.counterexamples):
            lines.append(f"counterexample\t{i}")
            lines.extend("\t" + line for line in ce.rstrip("\n").split("\n"))
        return "\n".join(lines) + "\n"


@dataclass
class _Node:
    sys: object
    summary: cf.PathSummary | None


def explore(
    prog: Program,
    semantics: str = "rollback",
    depth: int = 10,
    checks: tuple[str, ...] | set[str] = (),
    max_states: int = 200_000,
    max_counterexamples: int = 3,
) -> ExploreReport:
    """Enumerate every choice sequence of length at most ``depth``.

    Systems equal up to id renaming (and, for the rollback semantics, with the
    same path summary) are merged; derivation counts are carried through the
    merge so they stay exact.  A derivation is a maximal choice sequence: it
    ends at the bound, in a terminal system, or at a runtime fault.
    """
    eng = engine(semantics)
    unknown = set(checks) - set(CHECK_NAMES)
    if unknown:
        raise ValueError(f"unknown checks {sorted(unknown)}")
    if depth < 0:
        raise ValueError("depth must be >= 0")
    checks = tuple(c for c in CHECK_NAMES if c in set(checks))
    if checks and semantics != "rollback":
        raise ValueError("conformance checks apply to rollback derivations only")
    track = semantics == "rollback"
    report = ExploreReport(semantics, depth, violations={c: 0 for c in checks})

    init = eng.initial(prog, False)
    summary0 = cf.PathSummary() if track else None

    def key_of(sys, summary) -> str:
        return canonical_key(sys, summary.text if summary is not None else "")

    k0 = key_of(init, summary0)
    nodes: dict[str, _Node] = {k0: _Node(init, summary0)}
    parents: dict[str, tuple[str, Choice] | None] = {k0: None}
    expanded: dict[str, list] = {}
    layer: dict[str, int] = {k0: 1}
    seen_edges: set[tuple[str, str]] = set()

    def expand(key: str) -> list:
        if key in expanded:
            return expanded[key]
        node = nodes[key]
        sys, summary = node.sys, node.summary
        out = []
        succ = cf.Successors(sys)
        for c in eng.enabled(sys):
            try:
                label, nxt = eng.apply(sys, c)
            except RuntimeFault:
                out.append((c, None))
                continue
            viol: list[str] = []
            new_summary = None
            if track:
                new_summary, wd, lemma = cf.monitor_step(summary, 0, c, label, nxt)
                if "wellformed" in checks and wd:
                    viol.append("wellformed")
                if "lemma" in checks and lemma:
                    viol.append("lemma")
                if "conservative" in checks and summary.forward_only and not cf.is_backward(c):
                    if cf.sta_legal(sys, nxt, succ.sta) is None:
                        viol.append("conservative")
                if "soundness" in checks and cf.soundness_branch(sys, nxt, succ) is None:
                    viol.append("soundness")
                new_summary = new_summary.pruned(nxt)
            out.append((c, (nxt, new_summary, key_of(nxt, new_summary), viol)))
        expanded[key] = out
        return out

    for level in range(depth + 1):
        next_layer: dict[str, int] = defaultdict(int)
        for key, count in layer.items():
            if level == depth:
                report.derivations += count
                continue
            succ = expand(key)
            if not succ:
                report.derivations += count
                continue
            for c, result in succ:
                if result is None:
                    report.faults += 1 if (key, c.key) not in seen_edges else 0
                    seen_edges.add((key, c.key))
                    report.derivations += count
                    continue
                nxt, new_summary, nkey, viol = result
                if (key, c.key) not in seen_edges:
                    seen_edges.add((key, c.key))
                    for name in viol:
                        report.violations[name] += 1
                        if len(report.counterexamples) < max_counterexamples:
                            report.counterexamples.append(
                                _counterexample(prog, semantics, parents, key, c, name)
                            )
                if nkey not in nodes:
                    if len(nodes) >= max_states:
                        report.truncated = True
                        continue
                    nodes[nkey] = _Node(nxt, new_summary)
                    parents[nkey] = (key, c)
                next_layer[nkey] += count
        layer = next_layer
        if not layer:
            break
    report.states = len(nodes)
    return report


def _counterexample(prog, semantics, parents, key, choice, name) -> str:
    """Replay the recorded path to ``key`` plus ``choice`` and render it as a trace."""
    path = [choice]
    while parents[key] is not None:
        key, c = parents[key]
        path.append(c)
    path.reverse()
    # Ids in a merged state may differ from the replayed ones; fall back to rule/pid matching.
    keys = []
    sys = engine(semantics).initial(prog, False)
    eng = engine(semantics)
    for c in path:
        enabled = eng.enabled(sys)
        pick = c if c in enabled else next((e for e in enabled if (e.rule, e.pid) == (c.rule, c.pid)), None)
        if pick is None:
            break
        keys.append(pick.key)
        try:
            _, sys = eng.apply(sys, pick)
        except RuntimeFault:
            break
    trace = run(prog, semantics, Scripted(keys), max_steps=len(keys))
    return f"# violated: {name}\n" + trace.render()


# ---------------------------------------------------------------------------
# Program generation
# ---------------------------------------------------------------------------

_ATOMS = ("a", "b", "c")


def gen_source(seed: int, max_procs: int = 3, max_stmts: int = 8) -> str:
    """Random program text honouring the well-definedness conventions.

    Only the process that runs ``T = check`` names ``T`` in commit/rollback,
    each checkpoint gets at most one of the two, and both follow the check in
    the same statement sequence.
    """
    rng = random.Random(seed)
    nprocs = rng.randint(1, max(1, max_procs))
    workers = [f"w{i}" for i in range(1, nprocs)]

    def check_block(budget: int, names: dict, depth: int, body: Callable[[int], list[str]]) -> list[str]:
        names["t"] += 1
        var = f"T{names['t']}"
        inner_budget = max(0, budget - 2)
        inner = body(rng.randint(0, inner_budget))
        if depth < 1 and len(inner) + 3 <= budget and rng.random() < 0.3:
            inner += check_block(budget - len(inner) - 2, names, depth + 1, body)
        ending = rng.choice(["commit", "commit", "rollback", "none"])
        lines = [f"{var} = check"] + inner
        if ending != "none":
            lines.append(f"{ending}({var})")
        return lines

    def main_body() -> list[str]:
        lines = [f"W{i} = spawn w{i}" for i in range(1, nprocs)]
        if nprocs == 3 and rng.random() < 0.7:
            lines.append("send W1, {peer, W2}")
        names = {"t": 0, "s": 0}

        def simple(n: int) -> list[str]:
            out = []
            for _ in range(n):
                if workers and rng.random() < 0.7:
                    out.append(f"send W{rng.randint(1, len(workers))}, {rng.choice(_ATOMS)}")
                else:
                    names["s"] += 1
                    out.append(f"seq m{names['s']}")
            return out

        while len(lines) < max_stmts:
            room = max_stmts - len(lines)
            if room >= 2 and rng.random() < 0.5:
                lines += check_block(room, names, 0, simple)
            else:
                lines += simple(1)
            if rng.random() < 0.2:
                break
        return _trim(lines, max_stmts)

    def worker_body(idx: int) -> list[str]:
        names = {"t": 0, "s": 0, "r": 0}

        def simple(n: int) -> list[str]:
            out = []
            for _ in range(n):
                if rng.random() < 0.6:
                    names["r"] += 1
                    p = f"P{names['r']}"
                    a = rng.choice(_ATOMS)
                    out.append(f"receive | {{peer, {p}}} -> send {p}, {a} | {a} -> seq r{names['r']} | _ -> end")
                else:
                    names["s"] += 1
                    out.append(f"seq s{names['s']}")
            return out

        lines: list[str] = []
        while len(lines) < max_stmts:
            room = max_stmts - len(lines)
            if room >= 3 and rng.random() < 0.3:
                lines += check_block(room, names, 0, simple)
            else:
                lines += simple(1)
            if rng.random() < 0.3:
                break
        return _trim(lines, max_stmts)

    parts = ["proc main:"] + ["  " + s for s in main_body()] + ["end"]
    for i, w in enumerate(workers, 1):
        parts += ["", f"proc {w}:"] + ["  " + s for s in worker_body(i)] + ["end"]
    return "\n".join(parts) + "\n"


def _balanced(lines: list[str]) -> bool:
    """Every commit/rollback still has its check in the kept prefix."""
    checked = {ln.split(" = ")[0] for ln in lines if ln.endswith("= check")}
    for ln in lines:
        m = re.match(r"(commit|rollback)\((T\d+)\)", ln)
        if m and m.group(2) not in checked:
            return False
    return True


def _trim(lines: list[str], limit: int) -> list[str]:
    kept = lines[:limit]
    while kept and not _balanced(kept):
        kept.pop()
    return kept


def gen_program(seed: int, max_procs: int = 3, max_stmts: int = 8) -> Program:
    return parse_program(gen_source(seed, max_procs, max_stmts))


# ---------------------------------------------------------------------------
# Fixtures
# ---------------------------------------------------------------------------

PROGRAMS_DIR = Path(__file__).parent / "programs"


def load_fixture(name: str) -> Program:
    return parse_program((PROGRAMS_DIR / f"{name}.rvb").read_text())


def load_file(path: str | Path) -> Program:
    return parse_program(Path(path).read_text())
