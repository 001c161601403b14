import json
from fractions import Fraction

import pytest

from skillpool.agents.synthetic import (
    MutationOptimizer,
    SimulatedExecutor,
    seed_pool,
    synthetic_family,
)
from skillpool.core import Instance, OutcomeMatrix, Skill, SkillPool
from skillpool.engine import (
    ConfigError,
    Engine,
    ExecutorFailure,
    OptimizerScreenViolation,
    RunConfig,
    accept_update,
    load_traces,
    rotation_ordering,
    run,
    run_batch,
    screen_proposal,
    trace_violations,
    write_run_dir,
)
from skillpool.metrics import pass_at_k
from skillpool.table import ResultTable


class Identity:
    def optimize(self, prompt, failures):
        return prompt


class Fixed:
    def __init__(self, text):
        self.text = text
        self.calls = 0

    def optimize(self, prompt, failures):
        self.calls += 1
        return self.text


def family(n, reqs):
    """Instances whose requirement is given per index."""
    return [Instance(f"x{i:03d}", f"t req:{reqs(i)}", ":memory:", gold_result=ResultTable(("answer",), ((i + 1,),)))
            for i in range(n)]


def test_rotation_examples():
    assert [i + 1 for i in rotation_ordering(8, 3, 8)] == [3, 4, 5, 6, 7, 8, 1, 2]
    assert [rotation_ordering(8, t, 3)[0] for t in (1, 2, 3)] == [0, 3, 6]
    assert all(rotation_ordering(1, t, 5) == [0] for t in range(1, 6))
    assert rotation_ordering(4, 2, 4, stride_override=2) == [2, 3, 0, 1]


def test_uniform_first_position():
    K = 5
    firsts = [rotation_ordering(K, t, K)[0] for t in range(1, K + 1)]
    assert sorted(firsts) == list(range(K))


def test_accept_rule():
    assert accept_update("aa", "bbbb", Fraction(3, 10), Fraction(4, 10)).reason == "strict-improvement"
    d = accept_update("long prompt", "short", Fraction(1, 2), Fraction(1, 2))
    assert d.accept and d.reason == "brevity-tiebreak"
    assert not accept_update("same", "sam2", Fraction(1, 2), Fraction(1, 2)).accept
    assert not accept_update("a", "longer", Fraction(1, 2), Fraction(1, 2)).accept
    assert not accept_update("a", "b", Fraction(1, 2), Fraction(1, 3)).accept


def test_screen_only_new_tokens():
    screen_proposal("use strftime wisely", "use strftime", {"strftime"})
    with pytest.raises(OptimizerScreenViolation):
        screen_proposal("join on Salary", "join", {"salary"})


def test_half_solved_residual():
    insts = family(10, lambda i: "a" if i % 2 else "b")
    pool = SkillPool((Skill("s_a", "p cap:a"), Skill("s_c", "p cap:c")))
    cfg = RunConfig(K=2, T=1, b=10)
    _, trace, _ = run_batch(pool, insts, 1, SimulatedExecutor(), Identity(), OutcomeMatrix.empty(pool.ids, [i.instance_id for i in insts]), cfg)
    assert len(trace.entries[0].residual_after) == 5


def test_identity_optimizer_changes_nothing():
    insts = synthetic_family(30, seed=3)
    pool = seed_pool()
    out = run(pool, insts, RunConfig(K=3, T=3, b=10, rng_seed=1), SimulatedExecutor(), Identity())
    assert out.pool == pool
    for trace in out.traces:
        assert not any(e.accepted for e in trace.entries)
        assert trace_violations(trace) == []
        assert len(trace.entries[-1].residual_after) <= len(trace.instances)


def test_empty_residual_skips_rest():
    insts = family(6, lambda i: "a")
    pool = SkillPool((Skill("s1", "p cap:a"), Skill("s2", "p cap:b"), Skill("s3", "p cap:c")))
    opt = Fixed("p cap:a cap:b")
    _, trace, _ = run_batch(pool, insts, 1, SimulatedExecutor(), opt,
                            OutcomeMatrix.empty(pool.ids, [i.instance_id for i in insts]), RunConfig(K=3, T=1, b=6))
    assert trace.entries[0].residual_after == []
    assert [e.skipped for e in trace.entries] == [False, True, True]
    assert opt.calls == 0 and trace.entries[0].reason == "no-failures"


def test_accepted_prompt_commits_at_batch_end():
    insts = family(4, lambda i: "b")
    pool = SkillPool((Skill("s1", "p cap:a"), Skill("s2", "q cap:c")))
    opt = Fixed("p cap:b")
    new_pool, trace, matrix = run_batch(pool, insts, 1, SimulatedExecutor(), opt,
                                        OutcomeMatrix.empty(pool.ids, [i.instance_id for i in insts]),
                                        RunConfig(K=2, T=1, b=4))
    e1 = trace.entries[0]
    assert e1.accepted and e1.reason == "strict-improvement" and e1.residual_after == []
    assert (e1.old_rate, e1.new_rate) == (0, 1)
    assert new_pool["s1"].prompt == "p cap:b" and new_pool["s1"].version == 1
    assert new_pool["s1"].parent_version == 0
    assert trace.prompts_before["s1"] == "p cap:a"
    assert [a.version for a in matrix.attempts("s1", "x000")] == [0, 1]


def test_brevity_tiebreak_accepts_shorter():
    insts = family(4, lambda i: "b")
    pool = SkillPool((Skill("s1", "padding padding cap:a"),))
    new_pool, trace, _ = run_batch(pool, insts, 1, SimulatedExecutor(), Fixed("p cap:a"),
                                   OutcomeMatrix.empty(pool.ids, [i.instance_id for i in insts]),
                                   RunConfig(K=1, T=1, b=4))
    assert trace.entries[0].reason == "brevity-tiebreak"
    assert new_pool["s1"].prompt == "p cap:a"


def test_screen_violation_keeps_seed(company_db):
    insts = [Instance(f"x{i}", "t req:b", str(company_db), gold_result=ResultTable(("answer",), ((i + 1,),)))
             for i in range(3)]
    pool = SkillPool((Skill("s1", "p cap:a"),))
    new_pool, trace, _ = run_batch(pool, insts, 1, SimulatedExecutor(), Fixed("p cap:b check salary"),
                                   OutcomeMatrix.empty(pool.ids, [i.instance_id for i in insts]),
                                   RunConfig(K=1, T=1, b=3))
    assert trace.entries[0].reason == "screen-violation" and new_pool == pool


def test_overlong_and_empty_proposals_rejected():
    insts = family(3, lambda i: "b")
    pool = SkillPool((Skill("s1", "p cap:a"),))
    m = OutcomeMatrix.empty(pool.ids, [i.instance_id for i in insts])
    for text, reason in (("p cap:b" + " x" * 20, "too-long"), ("   ", "empty-proposal")):
        _, trace, _ = run_batch(pool, insts, 1, SimulatedExecutor(), Fixed(text), m,
                                RunConfig(K=1, T=1, b=3, max_prompt_len=20))
        assert trace.entries[0].reason == reason


def test_executor_failure_carries_position():
    class Broken:
        def run(self, skill, instance, budgets=None):
            raise RuntimeError("agent crashed")

    insts = family(2, lambda i: "a")
    pool = SkillPool((Skill("s1", "p cap:a"),))
    with pytest.raises(ExecutorFailure) as err:
        run(pool, insts, RunConfig(K=1, T=1, b=2), Broken(), Identity())
    assert (err.value.batch, err.value.position, err.value.skill_id) == (1, 1, "s1")


def test_config_errors():
    pool = seed_pool()
    insts = synthetic_family(5)
    with pytest.raises(ConfigError):
        run(pool, insts, RunConfig(K=3, T=1, b=6), SimulatedExecutor(), Identity())
    with pytest.raises(ConfigError):
        run(pool, insts, RunConfig(K=2, T=1, b=2), SimulatedExecutor(), Identity())
    with pytest.raises(ConfigError):
        RunConfig(K=0, T=1, b=1)


def test_zero_batches_returns_pool():
    pool = seed_pool()
    out = run(pool, synthetic_family(5), RunConfig(K=3, T=0, b=5), SimulatedExecutor(), Identity())
    assert out.pool == pool and out.traces == []


def _trace_bytes(seed, jobs=1):
    insts = synthetic_family(40, seed=5)
    eng = Engine(RunConfig(K=3, T=3, b=15, rng_seed=seed), SimulatedExecutor(0.2, seed), MutationOptimizer(), jobs=jobs)
    out = eng.run(seed_pool(), insts)
    return [t.dumps() for t in out.traces], out.pool.dumps()


def test_replay_is_byte_identical():
    assert _trace_bytes(4) == _trace_bytes(4)


def test_parallel_evaluation_matches_serial():
    assert _trace_bytes(6, jobs=4) == _trace_bytes(6, jobs=1)


def test_n_eval_multiple_attempts():
    insts = family(3, lambda i: "a")
    pool = SkillPool((Skill("s1", "p cap:a"),))
    out = run(pool, insts, RunConfig(K=1, T=1, b=3, n_eval=3), SimulatedExecutor(), Identity())
    assert out.matrix.success_count("s1", "x000") == (3, 3)


def test_three_capabilities_full_coverage():
    train = synthetic_family(60, seed=0, prefix="tr")
    held = synthetic_family(40, seed=1, prefix="ho", start=60)
    out = run(seed_pool(), train, RunConfig(K=3, T=3, b=20, rng_seed=0), SimulatedExecutor(), MutationOptimizer())
    ex = SimulatedExecutor()
    per = [[ex.run(s, x).result == x.gold_result for s in out.pool] for x in held]
    assert sum(pass_at_k(p, 3) for p in per) / len(per) == 1


def test_run_dir_layout_and_reload(tmp_path):
    insts = synthetic_family(30, seed=2)
    cfg = RunConfig(K=3, T=2, b=10, rng_seed=2)
    out = run(seed_pool(), insts, cfg, SimulatedExecutor(0.1, 2), MutationOptimizer())
    d = write_run_dir(tmp_path / "run", cfg, out)
    names = {p.relative_to(d).as_posix() for p in d.rglob("*") if p.is_file()}
    assert names == {"config.json", "pool_initial.json", "pool_final.json", "traces/batch_1.json",
                     "traces/batch_2.json", "outcomes.jsonl"}
    traces = load_traces(d)
    assert [t.dumps() for t in traces] == [t.dumps() for t in out.traces]
    assert json.loads((d / "config.json").read_text())["K"] == 3
    assert OutcomeMatrix.from_jsonl((d / "outcomes.jsonl").read_text()).to_jsonl() == out.matrix.to_jsonl()


def test_trace_violations_detect_tampering():
    insts = family(4, lambda i: "b")
    pool = SkillPool((Skill("s1", "p cap:a"), Skill("s2", "q cap:c")))
    _, trace, _ = run_batch(pool, insts, 1, SimulatedExecutor(), Fixed("p cap:b"),
                            OutcomeMatrix.empty(pool.ids, [i.instance_id for i in insts]), RunConfig(K=2, T=1, b=4))
    assert trace_violations(trace) == []
    trace.entries[0].residual_after = trace.entries[0].residual_before + ["extra"]
    trace.entries[0].new_rate = Fraction(0)
    problems = trace_violations(trace)
    assert any("grew" in p for p in problems) and any("disagrees" in p for p in problems)
