"""Episodic rapidly-exploring random trees with a heuristic episode generator."""
from ._accel import backend
from .envgen import EnvSpec, generate, preset, sample_problem
from .episode import GeneratorConfig, HeuristicGenerator, make_generator
from .errors import ContractViolation, InvalidProblem, NoFreeSpace
from .geometry import CollisionChecker, Environment, OrientedBox, Sphere
from .planners import PlannerParams, PlannerReport, plan
from .tree import SearchTree

__version__ = "0.1.0"

__all__ = [
    "CollisionChecker", "ContractViolation", "EnvSpec", "Environment", "GeneratorConfig",
    "HeuristicGenerator", "InvalidProblem", "NoFreeSpace", "OrientedBox", "PlannerParams",
    "PlannerReport", "SearchTree", "Sphere", "backend", "generate", "make_generator", "plan",
    "preset", "sample_problem",
]
