"""Executable semantics for an actor language with checkpoint, commit and rollback."""

from .conformance import (
    Derivation,
    Verdict,
    check_lemma_rollback,
    check_theorem_conservative,
    check_theorem_soundness,
    check_well_defined,
    proj_rev,
    proj_sta,
)
from .harness import (
    PriorityDefault,
    Scripted,
    SeededRandom,
    explore,
    gen_program,
    load_fixture,
    run,
    verify,
)
from .lang import ParseError, parse_program
from .rollback import RuntimeFault, rb_enabled, rb_initial, rb_step
from .reversible import rev_enabled, rev_initial, rev_step
from .standard import Choice, std_enabled, std_initial, std_step

__all__ = [
    "Choice", "Derivation", "ParseError", "PriorityDefault", "RuntimeFault", "Scripted",
    "SeededRandom", "Verdict", "check_lemma_rollback", "check_theorem_conservative",
    "check_theorem_soundness", "check_well_defined", "explore", "gen_program", "load_fixture",
    "parse_program", "proj_rev", "proj_sta", "rb_enabled", "rb_initial", "rb_step",
    "rev_enabled", "rev_initial", "rev_step", "run", "std_enabled", "std_initial", "std_step",
    "verify",
]
