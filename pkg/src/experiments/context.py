"""
Per-run bookkeeping shared by the experiment modules: assertions, artifacts
and the run's random generator
"""

import logging
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Any, Dict, List, Optional

import numpy as np
import pandas as pd
import scipy.sparse as sp

from src import artifacts
from src.schemas import AssertionResult, ExperimentSummary

logger = logging.getLogger(__name__)


@dataclass
class RunContext:
    command: str
    out_dir: Path
    seed: int = 0
    assertions: List[AssertionResult] = field(default_factory=list)
    artifacts: List[str] = field(default_factory=list)
    results: Dict[str, Any] = field(default_factory=dict)

    @cached_property
    def rng(self) -> np.random.Generator:
        return np.random.default_rng(self.seed)

    # ===== ASSERTIONS =====

    def check(
        self,
        name: str,
        passed: Optional[bool],
        measured: Any = None,
        threshold: Any = None,
        message: str = "",
    ) -> AssertionResult:
        """Record an assertion; passed=None marks it AMBIGUOUS"""
        status = "AMBIGUOUS" if passed is None else ("PASS" if passed else "FAIL")
        result = AssertionResult(
            name=name,
            status=status,
            measured=artifacts.to_jsonable(measured),
            threshold=artifacts.to_jsonable(threshold),
            message=message,
        )
        self.assertions.append(result)
        if status == "FAIL":
            logger.warning(f"{name}: FAIL (measured {result.measured}, threshold {result.threshold}) {message}")
        else:
            logger.info(f"{name}: {status}")
        return result

    def at_most(self, name: str, measured: Optional[float], limit: float, message: str = "") -> AssertionResult:
        if measured is None or not np.isfinite(measured):
            return self.check(name, None, measured, limit, message or "not measurable")
        return self.check(name, bool(measured <= limit), measured, limit, message)

    def at_least(self, name: str, measured: Optional[float], limit: float, message: str = "") -> AssertionResult:
        if measured is None or not np.isfinite(measured):
            return self.check(name, None, measured, limit, message or "not measurable")
        return self.check(name, bool(measured >= limit), measured, limit, message)

    # ===== ARTIFACTS =====

    def _register(self, path: Path) -> Path:
        relative = path.relative_to(self.out_dir).as_posix()
        if relative not in self.artifacts:
            self.artifacts.append(relative)
        return path

    def table(self, name: str, frame: pd.DataFrame) -> Path:
        return self._register(artifacts.write_csv(self.out_dir / f"{name}.csv", frame))

    def json(self, name: str, payload: Any) -> Path:
        return self._register(artifacts.write_json(self.out_dir / f"{name}.json", payload))

    def triplets(self, name: str, matrix: sp.spmatrix) -> Path:
        return self._register(artifacts.write_triplets(self.out_dir / f"{name}.txt", matrix))

    # ===== SUMMARY =====

    @property
    def status(self) -> str:
        """FAIL on any failure, else AMBIGUOUS on any undecided assertion"""
        statuses = [a.status for a in self.assertions]
        if "FAIL" in statuses:
            return "FAIL"
        if "AMBIGUOUS" in statuses:
            return "AMBIGUOUS"
        return "PASS"

    @property
    def exit_code(self) -> int:
        return 1 if self.status == "FAIL" else 0

    def summary(self) -> ExperimentSummary:
        return ExperimentSummary(
            command=self.command,
            status=self.status,
            exit_code=self.exit_code,
            seed=self.seed,
            assertions=self.assertions,
            artifacts=sorted(self.artifacts + ["summary.json"]),
            results=artifacts.to_jsonable(self.results),
        )
