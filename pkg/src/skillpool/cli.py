"""Command-line entry points.

Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from . import __version__
from .agents.base import RunResult
from .agents.llm import TransportError
from .agents.synthetic import MutationOptimizer, SimulatedExecutor, seed_pool, synthetic_family
from .agents.tools import DATA_DIR
from .config import CliConfig, load_config
from .core import Instance, SkillPool
from .engine import ConfigError, Engine, ExecutorFailure, OptimizerScreenViolation, write_run_dir
from .execution import DuplicateId, ExecError, GoldStore, ParseError, load_manifest, save_manifest, schema_summary
from .greedy import guarantee_suite
from .metrics import MissingSelection, metrics_report
from .selection import Candidate, JudgeFailure, LLMJudge, OracleJudge, select
from .table import ResultTable
from .trajectory import TooFew, Trajectory, UnknownTool, group_by_instance, similarity_matrix

logger = logging.getLogger("skillpool")

SEED_SKILLS = DATA_DIR / "seed_skills.json"

# exception type -> subsystem named in error messages; first match wins
_SUBSYSTEMS = (
    (ConfigError, "config"),
    ((ParseError, DuplicateId), "manifest"),
    (ExecutorFailure, "executor"),
    (OptimizerScreenViolation, "optimizer"),
    (TransportError, "llm"),
    (ExecError, "exec"),
    (JudgeFailure, "selection"),
    (MissingSelection, "metrics"),
    ((TooFew, UnknownTool), "trajectory"),
    (OSError, "io"),
)


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------


def sha256_file(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out_dir: Path, command: str, argv: Sequence[str], inputs: Sequence[Path],
                   seeds: dict, config: Optional[CliConfig] = None) -> Path:
    """Record what a run consumed so it can be replayed."""
    out_dir.mkdir(parents=True, exist_ok=True)
    doc = {
        "command": command,
        "argv": list(argv),
        "version": __version__,
        "seeds": seeds,
        "inputs": {str(p): sha256_file(p) for p in inputs},
        "config": config.to_json() if config else None,
    }
    path = out_dir / "run_manifest.json"
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    return path


def _dump_jsonl(rows, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in rows))


def _read_jsonl(path: Path) -> list[dict]:
    rows = []
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except ValueError as exc:
                raise ParseError(n, f"{path}: {exc}") from exc
    return rows


def _write_json(doc: dict, out: Optional[str]) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _llm_client(cfg: CliConfig):
    from .agents.llm import HTTPChatClient

    if not cfg.llm.endpoint or not cfg.llm.model:
        raise ConfigError("llm runs need [llm] endpoint and model")
    return HTTPChatClient(cfg.llm.endpoint, cfg.llm.model, timeout_s=cfg.llm.timeout_s)


def _executor(kind: str, cfg: CliConfig, db_root: Path):
    if kind == "sim":
        return SimulatedExecutor(cfg.sim.noise, cfg.sim.seed)
    from .agents.loop import AgentExecutor

    return AgentExecutor(_llm_client(cfg), cfg.budgets, db_root, cfg.limits, cfg.llm.retries)


def _resolve_pool(arg: Optional[str], cfg: Optional[CliConfig]) -> Path:
    if arg:
        p = Path(arg)
        return p / "pool_final.json" if p.is_dir() else p
    if cfg is not None and cfg.pool_path() is not None:
        return cfg.pool_path()
    return SEED_SKILLS


# -- subcommands ---------------------------------------------------------------


def cmd_optimize(args, argv) -> int:
    cfg = load_config(args.config, args.override)
    if cfg.run is None:
        raise ConfigError("missing [run] section")
    if args.executor == "sim":
        cfg.require_seeds()
    pool_path = _resolve_pool(args.pool, cfg)
    pool0 = SkillPool.load(pool_path)
    train_path = Path(args.train)
    train = load_manifest(train_path)
    db_root = train_path.parent
    out = Path(args.out)

    if args.optimizer == "mutate":
        optimizer = MutationOptimizer()
    else:
        from .agents.reflect import LLMSkillOptimizer

        optimizer = LLMSkillOptimizer(_llm_client(cfg), cfg.llm.reflection_temperature,
                                      cfg.budgets.max_completion_tokens)
    grader = GoldStore(db_root, out / "gold_cache", cfg.limits, cfg.match)
    engine = Engine(cfg.run, _executor(args.executor, cfg, db_root), optimizer, grader,
                    cfg.budgets, args.jobs, db_root)
    output = engine.run(pool0, train)
    write_run_dir(out, cfg.run, output)
    inputs = [p for p in (Path(args.config) if args.config else None, pool_path, train_path) if p]
    write_manifest(out, "optimize", argv, inputs,
                   {"rng_seed": cfg.run.rng_seed, "sim_seed": cfg.sim.seed}, cfg)
    accepted = sum(e.accepted for t in output.traces for e in t.entries)
    logger.info("optimize: %d batches, %d accepted updates", len(output.traces), accepted)
    return 0


def _run_all(executor, pool: SkillPool, instances: Sequence[Instance], jobs: int) -> dict:
    jobs_list = [(inst, n) for inst in instances for n in range(pool.k)]

    def one(job) -> RunResult:
        inst, n = job
        return executor.run(pool.skills[n], inst)

    if jobs > 1:
        with ThreadPoolExecutor(jobs) as ex:
            results = list(ex.map(one, jobs_list))
    else:
        results = [one(j) for j in jobs_list]
    out: dict[str, list[RunResult]] = {}
    for (inst, _), res in zip(jobs_list, results):
        out.setdefault(inst.instance_id, []).append(res)
    return out


def cmd_infer(args, argv) -> int:
    cfg = load_config(args.config, args.override)
    if args.executor == "sim":
        cfg.require_seeds(("sim.seed",))
    pool_path = _resolve_pool(args.pool, None)
    pool = SkillPool.load(pool_path)
    dataset_path = Path(args.dataset)
    instances = sorted(load_manifest(dataset_path), key=lambda i: i.instance_id)
    db_root = dataset_path.parent
    out = Path(args.out)
    gold = GoldStore(db_root, out.parent / "gold_cache", cfg.limits, cfg.match)
    llm_judge = LLMJudge(_llm_client(cfg), cfg.llm.judge_temperature) if args.judge == "llm" else None

    runs = _run_all(_executor(args.executor, cfg, db_root), pool, instances, args.jobs)
    selections, candidates, trajectories = [], [], []
    for inst in instances:
        cands = []
        for n, (skill, res) in enumerate(zip(pool, runs[inst.instance_id])):
            error = res.error_summary() or None
            cands.append(Candidate(skill.skill_id, res.sql or "", res.result if res.ok else None, error, n))
            candidates.append({
                "instance_id": inst.instance_id,
                "skill_id": skill.skill_id,
                "skill_index": n,
                "sql": res.sql,
                "status": res.status,
                "error": error,
                "result": res.result.to_json() if res.ok else None,
                "correct": gold.is_correct(inst, res.result) if res.ok else False,
            })
            trajectories.append(res.trajectory.to_json())
        judge = llm_judge or OracleJudge(gold.gold(inst), cfg.match)
        schema = schema_summary(inst.db_ref, db_root) if args.judge == "llm" else ""
        sel = select(inst.instance_id, cands, judge, inst.question, schema, cfg.match)
        selections.append(sel.to_json())

    _dump_jsonl(selections, out)
    _dump_jsonl(candidates, out.parent / "candidates.jsonl")
    _dump_jsonl(trajectories, out.parent / "trajectories.jsonl")
    inputs = [p for p in (Path(args.config) if args.config else None, pool_path, dataset_path) if p]
    write_manifest(out.parent, "infer", argv, inputs, {"sim_seed": cfg.sim.seed}, cfg)
    return 0


def cmd_evaluate(args, argv) -> int:
    dataset_path = Path(args.dataset)
    instances = {i.instance_id: i for i in load_manifest(dataset_path)}
    sel_path = Path(args.selections)
    cand_path = Path(args.candidates) if args.candidates else sel_path.parent / "candidates.jsonl"
    gold = GoldStore(dataset_path.parent)

    per_instance: dict[str, list[tuple[int, str, bool]]] = {}
    for row in _read_jsonl(cand_path):
        iid = row["instance_id"]
        if iid not in instances:
            raise MissingSelection(f"candidate for unknown instance {iid!r}")
        result = ResultTable.from_json(row["result"]) if row.get("result") is not None else None
        ok = gold.is_correct(instances[iid], result)
        per_instance.setdefault(iid, []).append((row["skill_index"], row["skill_id"], ok))
    missing = sorted(set(instances) - set(per_instance))
    if missing:
        raise MissingSelection(f"no candidates for instances: {', '.join(missing[:5])}")
    for rows in per_instance.values():
        rows.sort()

    selections = {r["instance_id"]: r["winner_skill_id"] for r in _read_jsonl(sel_path)}
    report = metrics_report(
        {iid: [ok for _, _, ok in rows] for iid, rows in per_instance.items()},
        selections,
        {(iid, sid): ok for iid, rows in per_instance.items() for _, sid, ok in rows},
        {iid: [sid for _, sid, _ in rows] for iid, rows in per_instance.items()},
    )
    _write_json(report, args.out)
    if args.out:
        write_manifest(Path(args.out).parent, "evaluate", argv, [dataset_path, sel_path, cand_path], {})
    return 0


def cmd_verify_greedy(args, argv) -> int:
    for name in ("skills", "instances", "k", "trials"):
        if getattr(args, name) < 1:
            raise UsageError(f"--{name} must be at least 1")
    report = guarantee_suite(args.trials, args.skills, args.instances, args.k, args.seed, fixed_shape=True)
    _write_json(report, args.out)
    if args.out:
        write_manifest(Path(args.out).parent, "verify-greedy", argv, [], {"seed": args.seed})
    if report["violations"]:
        print(f"error [greedy]: {len(report['violations'])} guarantee violations", file=sys.stderr)
        return 2
    return 0


def cmd_analyze(args, argv) -> int:
    root = Path(args.runs)
    files = sorted(root.rglob("trajectories.jsonl"))
    if not files:
        raise FileNotFoundError(f"no trajectories.jsonl under {root}")
    trajs = [Trajectory.from_json(row) for f in files for row in _read_jsonl(f)]
    report = similarity_matrix(group_by_instance(trajs)).to_json()
    _write_json(report, args.out)
    write_manifest(Path(args.out).parent, "analyze-trajectories", argv, files, {})
    return 0


_CONFIG_TEMPLATE = """pool = "seeds.json"

[run]
K = {K}
T = {T}
b = {b}
rng_seed = {seed}

[sim]
noise = {noise}
seed = {seed}
"""


def cmd_simulate(args, argv) -> int:
    caps = [c for c in args.capabilities.split(",") if c]
    if not caps or len(set(caps)) != len(caps):
        raise UsageError("--capabilities needs distinct, non-empty names")
    if args.train < 1 or args.heldout < 0:
        raise UsageError("--train must be positive and --heldout non-negative")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    max_req = min(args.max_requirements, len(caps))
    train = synthetic_family(args.train, caps, args.seed, "tr", max_req)
    held = synthetic_family(args.heldout, caps, args.seed + 1, "ho", max_req, start=args.train)
    save_manifest(train, out / "train.jsonl")
    save_manifest(held, out / "heldout.jsonl")
    seed_pool(caps).save(out / "seeds.json")
    (out / "config.toml").write_text(_CONFIG_TEMPLATE.format(
        K=len(caps), T=args.batches, b=min(args.batch_size, args.train), seed=args.seed, noise=args.noise))
    write_manifest(out, "simulate", argv, [], {"seed": args.seed})
    return 0


# -- parser and dispatch ---------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="skillpool", description="Residual skill ensembles for agentic text-to-SQL.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--jobs", type=int, default=1, help="max parallel agent runs")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("optimize", help="build a skill pool on training instances")
    p.add_argument("--config", help="TOML config")
    p.add_argument("--override", help="JSON object merged over the config")
    p.add_argument("--train", required=True, help="training manifest (JSONL)")
    p.add_argument("--pool", help="seed pool JSON (default: config pool, then packaged seeds)")
    p.add_argument("--executor", choices=("sim", "llm"), default="sim")
    p.add_argument("--optimizer", choices=("mutate", "llm"), default="mutate")
    p.add_argument("--out", required=True, help="run directory")
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("infer", help="run a pool on a dataset and select one query per instance")
    p.add_argument("--pool", required=True, help="run directory or pool JSON")
    p.add_argument("--dataset", required=True, help="manifest (JSONL)")
    p.add_argument("--judge", choices=("oracle", "llm"), default="oracle")
    p.add_argument("--executor", choices=("sim", "llm"), default="sim")
    p.add_argument("--config", help="TOML config")
    p.add_argument("--override", help="JSON object merged over the config")
    p.add_argument("--out", required=True, help="selections.jsonl path")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("evaluate", help="score selections against gold results")
    p.add_argument("--selections", required=True)
    p.add_argument("--dataset", required=True)
    p.add_argument("--candidates", help="default: candidates.jsonl next to the selections")
    p.add_argument("--out", help="metrics JSON path (default: stdout)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("verify-greedy", help="check the greedy approximation bound on random matrices")
    p.add_argument("--skills", type=int, required=True)
    p.add_argument("--instances", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--trials", type=int, default=50)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="report path (default: stdout)")
    p.set_defaults(func=cmd_verify_greedy)

    p = sub.add_parser("analyze-trajectories", help="pairwise trajectory similarity report")
    p.add_argument("--runs", required=True, help="directory searched for trajectories.jsonl")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("simulate", help="write a synthetic capability dataset and config")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--capabilities", default="a,b,c")
    p.add_argument("--train", type=int, default=60)
    p.add_argument("--heldout", type=int, default=40)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--max-requirements", type=int, default=2)
    p.add_argument("--batches", type=int, default=3)
    p.add_argument("--batch-size", type=int, default=20)
    p.set_defaults(func=cmd_simulate)
    return parser


def _subsystem(exc: BaseException, command: str) -> str:
    for types, name in _SUBSYSTEMS:
        if isinstance(exc, types):
            return name
    return command


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.jobs < 1:
        print("skillpool: error: --jobs must be at least 1", file=sys.stderr)
        return 1
    try:
        return args.func(args, argv)
    except UsageError as exc:
        print(f"skillpool {args.command}: error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:
        logger.debug("failure", exc_info=True)
        print(f"skillpool {args.command}: error [{_subsystem(exc, args.command)}]: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
