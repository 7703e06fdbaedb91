"""Behavior-tree policy learning with genetic programming on a fast
state-machine world model."""

from .bt import (
    FAILURE,
    RUNNING,
    SUCCESS,
    MalformedGenotype,
    parse,
    serialize,
    tick,
    validate,
)
from .fitness import TABLE2, FitnessValue, FitnessWeights, cost, evaluate
from .gp import GenerationStats, GpParams, Individual, run
from .world import Profile, builtin_profile, make_profile, reset, run_episode

__all__ = [
    "SUCCESS",
    "FAILURE",
    "RUNNING",
    "MalformedGenotype",
    "parse",
    "serialize",
    "tick",
    "validate",
    "FitnessWeights",
    "FitnessValue",
    "TABLE2",
    "cost",
    "evaluate",
    "GpParams",
    "GenerationStats",
    "Individual",
    "run",
    "Profile",
    "builtin_profile",
    "make_profile",
    "reset",
    "run_episode",
]
