"""
Step orchestrator for Gibbs sweeps.

A sweep is a set of named update steps with dependencies. The orchestrator
resolves them once into a deterministic order (first ready step in
registration order wins) and then runs that order against a shared context.
"""

from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Set

from rich.console import Console

from .dist import RandomStream
from .errors import PreconditionError
from ..models.config import Hyperparameters, ModelVariant
from ..models.state import AugmentedCounts, CountTensor, LatentState


@dataclass
class SweepContext:
    """Everything a step may read or rewrite during one sweep."""
    tensor: CountTensor
    state: LatentState
    hp: Hyperparameters
    variant: ModelVariant
    rng: RandomStream
    aug: Optional[AugmentedCounts] = None
    keep_split: bool = False


StepFunction = Callable[[SweepContext], Any]


class SweepOrchestrator:
    """
    Orchestrates the execution of sweep steps.

    Handles the sequencing of updates so that callers only declare which
    steps exist and what each one needs first.
    """

    def __init__(self, verbose: bool = False):
        self.verbose = verbose
        self.console = Console() if verbose else None
        self.steps: List[Dict[str, Any]] = []
        self._order: Optional[List[Dict[str, Any]]] = None

    def register_step(self, name: str, function: StepFunction, dependencies: Optional[List[str]] = None):
        """Register a step with the names of the steps that must run before it."""
        if any(step["name"] == name for step in self.steps):
            raise PreconditionError(f"step '{name}' registered twice")
        self.steps.append({
            "name": name,
            "function": function,
            "dependencies": list(dependencies or []),
        })
        self._order = None

    @property
    def step_names(self) -> List[str]:
        return [step["name"] for step in self.resolve_order()]

    def resolve_order(self) -> List[Dict[str, Any]]:
        """Dependency-respecting order; cached until the next registration."""
        if self._order is not None:
            return self._order

        order: List[Dict[str, Any]] = []
        completed: Set[str] = set()
        known = {step["name"] for step in self.steps}
        for step in self.steps:
            missing = [dep for dep in step["dependencies"] if dep not in known]
            if missing:
                raise PreconditionError(f"step '{step['name']}' depends on unknown steps: {missing}")

        while len(completed) < len(self.steps):
            for step in self.steps:
                if step["name"] in completed:
                    continue
                if all(dep in completed for dep in step["dependencies"]):
                    order.append(step)
                    completed.add(step["name"])
                    break
            else:
                remaining = [s["name"] for s in self.steps if s["name"] not in completed]
                raise PreconditionError(f"Cannot resolve dependencies for steps: {remaining}")

        self._order = order
        return order

    def execute(self, context: SweepContext) -> Dict[str, Any]:
        """
        Run every registered step once, in resolved order.

        Args:
            context: Shared sweep context; steps mutate its state in place

        Returns:
            Dict mapping step names to whatever each step returned
        """
        results: Dict[str, Any] = {}
        for step in self.resolve_order():
            if self.console is not None:
                self.console.log(f"step {step['name']}")
            results[step["name"]] = step["function"](context)
        return results
