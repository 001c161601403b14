"""Executors that run a skill on an instance: synthetic stand-ins and the LLM tool loop."""

from .base import Budgets, Executor, RunResult
from .synthetic import (
    MutationOptimizer,
    NoFailures,
    SimulatedExecutor,
    SyntheticSkill,
    mutate_skill,
    seed_pool,
    simulated_execute,
    synthetic_family,
)

__all__ = [
    "Budgets",
    "Executor",
    "RunResult",
    "MutationOptimizer",
    "NoFailures",
    "SimulatedExecutor",
    "SyntheticSkill",
    "mutate_skill",
    "seed_pool",
    "simulated_execute",
    "synthetic_family",
]
