"""Desk-scale dataframe-pipeline environment and its learning agent."""

from cosmocore.miniworld.agent import Agent, normalized_entropy, softmax
from cosmocore.miniworld.corpus import (
    TaskSpec,
    build_candidates,
    generate_corpus,
    load_corpus,
    validate_corpus,
)
from cosmocore.miniworld.dsl import (
    BUG_KINDS,
    Aggregate,
    ExecutionResult,
    Filter,
    Join,
    Program,
    Project,
    Table,
    execute,
    mutate,
    mutation_space,
)
from cosmocore.miniworld.features import encode_features

__all__ = [
    "BUG_KINDS",
    "Agent",
    "Aggregate",
    "ExecutionResult",
    "Filter",
    "Join",
    "Program",
    "Project",
    "Table",
    "TaskSpec",
    "build_candidates",
    "encode_features",
    "execute",
    "generate_corpus",
    "load_corpus",
    "mutate",
    "mutation_space",
    "normalized_entropy",
    "softmax",
    "validate_corpus",
]
