"""
Result models written to disk: experiment reports and joint-distribution test reports.
"""

from typing import Any, Dict, List, Optional

import numpy as np
from pydantic import BaseModel, Field, model_validator

from ..utils.helpers import atomic_write_json


def _sample_std(values: List[float]) -> float:
    if len(values) < 2:
        return 0.0
    return float(np.std(np.asarray(values, dtype=float), ddof=1))


class RunRecord(BaseModel):
    """One (condition, variant, run) accuracy."""
    condition: str
    variant: str
    run: int = Field(ge=0)
    seed: int = Field(ge=0)
    accuracy: float = Field(ge=0, le=1)


class ExperimentReport(BaseModel):
    """Accuracies of one variant on one condition over repeated runs."""
    condition: str
    variant: str
    accuracies: List[float] = Field(min_length=1)
    seeds: List[int] = Field(default_factory=list)
    mean: Optional[float] = None
    std: Optional[float] = None
    fingerprint: Dict[str, Any] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _summaries_match_runs(self) -> "ExperimentReport":
        if any(not 0.0 <= a <= 1.0 for a in self.accuracies):
            raise ValueError("accuracies must lie in [0, 1]")
        mean = float(np.mean(np.asarray(self.accuracies, dtype=float)))
        std = _sample_std(self.accuracies)
        if self.mean is not None and self.mean != mean:
            raise ValueError(f"stored mean {self.mean} != recomputed {mean}")
        if self.std is not None and self.std != std:
            raise ValueError(f"stored std {self.std} != recomputed {std}")
        self.mean = mean
        self.std = std
        return self

    @property
    def errors(self) -> List[float]:
        return [1.0 - a for a in self.accuracies]

    def records(self) -> List[RunRecord]:
        seeds = self.seeds or [0] * len(self.accuracies)
        return [RunRecord(condition=self.condition, variant=self.variant, run=i, seed=seed, accuracy=acc)
                for i, (seed, acc) in enumerate(zip(seeds, self.accuracies))]


class GewekeStatistic(BaseModel):
    name: str
    forward_mean: float
    forward_se: float
    gibbs_mean: float
    gibbs_se: float
    z_score: float


class GewekeReport(BaseModel):
    """Forward vs successive-conditional comparison for one sweep block."""
    block: str
    rounds: int
    threshold: float
    statistics: List[GewekeStatistic] = Field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(abs(stat.z_score) <= self.threshold for stat in self.statistics)

    @property
    def worst(self) -> Optional[GewekeStatistic]:
        if not self.statistics:
            return None
        return max(self.statistics, key=lambda stat: abs(stat.z_score))

    def save_json(self, output_path: str) -> None:
        atomic_write_json(output_path, self.model_dump())
