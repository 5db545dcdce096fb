from __future__ import annotations

from collections import Counter

import pytest
from hypothesis import given
from hypothesis import strategies as st

from reverb.harness import (
    PriorityDefault,
    Scripted,
    SeededRandom,
    TraceFormatError,
    canonical_key,
    explore,
    gen_program,
    load_fixture,
    make_policy,
    parse_trace,
    rename_ids,
    run,
    verify,
)
from reverb.lang import erase_program, parse_program
from reverb.rollback import BACKWARD_RULES

import oracles

# Commits a checkpoint it only holds by propagation: not well defined.
FOREIGN_COMMIT = """
proc main:
  W = spawn w
  T = check
  send W, T
  seq x
end
proc w:
  receive | X -> commit(X)
  end
end
"""

DOUBLE_COMMIT = "proc main:\n  T = check\n  commit(T)\n  commit(T)\nend\n"


class TestRun:
    def test_empty_main_is_a_zero_step_final_trace(self):
        trace = run(parse_program("proc main:\nend\n"), "rollback")
        assert trace.records == [] and trace.status == "final"

    def test_fault_is_a_status_not_a_crash(self):
        trace = run(parse_program(DOUBLE_COMMIT), "rollback")
        assert trace.status == "runtime-fault" and "commit(t1)" in trace.fault
        assert len(trace.records) == 2

    def test_max_steps(self):
        trace = run(load_fixture("example2"), "rollback", max_steps=50)
        assert trace.status == "max-steps" and len(trace.records) == 50

    def test_exhausted_script_is_cut_short(self, ex1, ex1_script):
        assert run(ex1, "standard", Scripted.parse(ex1_script)).status == "max-steps"

    def test_unknown_mode_and_policy(self, ex1):
        with pytest.raises(ValueError):
            run(ex1, "rollback", mode="nope")
        with pytest.raises(ValueError):
            make_policy("sometimes")

    def test_render_layout(self, ex1):
        text = run(ex1, "standard", max_steps=3, snapshots=True).render()
        lines = text.splitlines()
        assert lines[0] == "#reverb-trace\t1"
        assert lines[-1] == "#status\tmax-steps"
        body = [ln for ln in lines if not ln.startswith("#")]
        assert [ln.split("\t")[0] for ln in body] == ["0", "@", "1", "@", "2", "@"]
        assert all(len(ln.split("\t")) == 6 for ln in body if ln[0] != "@")


class TestPolicies:
    def test_default_finishes_rollbacks_before_moving_on(self, ex3):
        trace = run(ex3, "rollback", PriorityDefault(), max_steps=30)
        rules = [r.choice.rule for r in trace.records]
        i = rules.index("rollback")
        j = next(k for k in range(i + 1, len(rules)) if not trace.systems[k + 1].procs or
                 all(p.forward for p in trace.systems[k + 1].procs))
        assert all(r in BACKWARD_RULES for r in rules[i + 1 : j + 1])

    def test_round_robin_is_fair(self):
        src = "proc main:\n A = spawn w\n B = spawn w\n" + " seq m\n" * 30 + "end\n"
        src += "proc w:\n" + " seq s\n" * 30 + "end\n"
        trace = run(parse_program(src), "standard", PriorityDefault(), max_steps=60)
        counts = Counter(r.choice.pid for r in trace.records[2:])
        assert len(counts) == 3 and max(counts.values()) - min(counts.values()) <= 1

    def test_script_parse(self):
        pol = Scripted.parse("# comment\nspawn p1\n\nrec p2 0  # trailing\n")
        assert pol.keys == ["spawn\tp1\t-", "rec\tp2\t0"]

    @given(st.integers(0, 10_000))
    def test_random_policy_is_seeded(self, seed):
        a = run(load_fixture("example3"), "rollback", SeededRandom(seed), max_steps=30)
        b = run(load_fixture("example3"), "rollback", SeededRandom(seed), max_steps=30)
        assert a.render() == b.render()


class TestVerify:
    def test_own_output_passes(self, ex2):
        result = verify(run(ex2, "rollback", max_steps=40).render())
        assert result.passed and set(result.verdicts) == {"wellformed", "conservative", "soundness", "lemma"}

    @pytest.mark.parametrize("index", [0, 5, 17])
    def test_edited_record_diverges_at_that_index(self, ex2, index):
        lines = run(ex2, "rollback", max_steps=30).render().splitlines()
        body = [i for i, ln in enumerate(lines) if not ln.startswith("#")]
        fields = lines[body[index]].split("\t")
        fields[4] = fields[4] + "x"
        lines[body[index]] = "\t".join(fields)
        result = verify("\n".join(lines) + "\n")
        assert result.divergence == index

    def test_edited_choice_diverges(self, ex1):
        text = run(ex1, "standard", max_steps=5).render().replace("0\tspawn\tp1", "0\tsend\tp1")
        assert verify(text).divergence == 0

    def test_tampered_status(self, ex1):
        text = run(ex1, "standard").render().replace("#status\tfinal", "#status\tdeadlock")
        assert verify(text).divergence is not None

    def test_format_errors(self, ex1):
        text = run(ex1, "standard", max_steps=3).render()
        with pytest.raises(TraceFormatError):
            verify(text.replace("#reverb-trace\t1", "#reverb-trace\t9"))
        with pytest.raises(TraceFormatError):
            verify(text.replace("#status\tmax-steps\n", ""))
        with pytest.raises(TraceFormatError):
            verify(text.replace("#status", "0\tspawn\tp1\n#status"))
        with pytest.raises(TraceFormatError):
            verify(text.replace("spawn p2body", "spawn p3body", 1))

    def test_handler_traces_replay_without_checks(self, ex2):
        result = verify(run(ex2, "rollback", max_steps=60, mode="handler").render())
        assert result.passed and result.verdicts == {} and result.status == "deadlock"

    def test_parse_round_trip(self, ex3):
        trace = run(ex3, "rollback", max_steps=12, snapshots=True)
        parsed = parse_trace(trace.render())
        assert parsed.program_text == ex3.source
        assert len(parsed.records) == 12 and parsed.header["semantics"] == "rollback"

    def test_faulting_trace_replays_to_the_same_fault(self):
        text = run(parse_program(DOUBLE_COMMIT), "rollback").render()
        assert "#fault\tcommit\tp1\t-" in text
        result = verify(text)
        assert result.divergence is None and result.status == "runtime-fault"

    def test_violating_trace_fails_verification(self):
        text = run(parse_program(FOREIGN_COMMIT), "rollback", max_steps=20).render()
        result = verify(text)
        assert result.divergence is None and not result.passed
        assert not result.verdicts["wellformed"].passed


class TestExplore:
    def test_depth_zero(self, ex2):
        report = explore(ex2, "rollback", 0)
        assert (report.states, report.derivations) == (1, 1)

    def test_pinned_example1_counts(self, ex1):
        report = explore(ex1, "standard", 5)
        assert (report.states, report.derivations) == (12, 11)

    def test_example3_depth14_clean(self, ex3):
        report = explore(ex3, "rollback", 14, {"soundness", "wellformed", "lemma"})
        assert report.passed and not report.truncated and report.derivations > 0

    @pytest.mark.parametrize(
        "name, semantics, depth",
        [("example1", "standard", 7), ("example2", "rollback", 9), ("example3", "rollback", 9),
         ("example1", "rollback", 6)],
    )
    def test_matches_naive_enumeration(self, name, semantics, depth):
        prog = load_fixture(name)
        report = explore(prog, semantics, depth)
        assert (report.states, report.derivations, report.faults) == oracles.dfs_counts(prog, semantics, depth)

    @given(st.integers(0, 2000), st.integers(0, 6), st.sampled_from(["rollback", "reversible", "standard"]))
    def test_matches_naive_enumeration_on_generated(self, seed, depth, semantics):
        prog = gen_program(seed, 3, 5)
        if semantics != "rollback":
            prog = erase_program(prog)
        report = explore(prog, semantics, depth)
        assert (report.states, report.derivations, report.faults) == oracles.dfs_counts(prog, semantics, depth)

    def test_faults_end_derivations(self):
        report = explore(parse_program(DOUBLE_COMMIT), "rollback", 5)
        assert report.faults == 1 and report.derivations == 1

    def test_violations_come_with_replayable_counterexamples(self):
        report = explore(parse_program(FOREIGN_COMMIT), "rollback", 8, {"wellformed", "soundness"})
        assert report.violations["wellformed"] > 0 and report.violations["soundness"] == 0
        ce = report.counterexamples[0]
        assert ce.startswith("# violated: wellformed")
        result = verify(ce.split("\n", 1)[1])
        assert result.divergence is None and not result.verdicts["wellformed"].passed

    def test_truncation_is_flagged(self, ex2):
        report = explore(ex2, "rollback", 12, max_states=20)
        assert report.truncated and report.states == 20
        assert "truncated\ttrue" in report.render()

    def test_bad_arguments(self, ex1):
        with pytest.raises(ValueError):
            explore(ex1, "standard", 3, {"soundness"})
        with pytest.raises(ValueError):
            explore(ex1, "rollback", 3, {"bogus"})
        with pytest.raises(ValueError):
            explore(ex1, "rollback", -1)

    @given(st.integers(0, 500))
    def test_generated_programs_are_well_defined(self, seed):
        report = explore(gen_program(seed), "rollback", 6, {"wellformed"})
        assert report.violations["wellformed"] == 0


class TestCanonical:
    def test_renaming_by_first_occurrence(self):
        assert rename_ids("@p4 @t7 @p2 @p4 @l9") == "@p1 @t1 @p2 @p1 @l1"

    def test_spawn_order_does_not_split_states(self):
        src = "proc main:\n A = spawn w\n seq x\nend\nproc w:\n B = spawn z\nend\nproc z:\nend\n"
        prog = parse_program(src)
        a = run(prog, "standard", Scripted(["spawn\tp1\t-", "seq\tp1\t-", "spawn\tp2\t-"])).final
        b = run(prog, "standard", Scripted(["spawn\tp1\t-", "spawn\tp2\t-", "seq\tp1\t-"])).final
        assert canonical_key(a) == canonical_key(b)
