"""Synthetic interaction data drawn from the knowledge-tracing generative process.

The draw discipline is fixed so a (config, seed) pair is fully
reproducible: students are visited in index order, KCs in index order
within a student, and each (student, KC) chain consumes its draws as

    initial state, then per opportunity an emission draw followed by a
    transition draw (no transition after the last opportunity), then one
    retention draw selecting which opportunities are kept.

All draws come from one shared ``numpy`` Generator seeded from the config.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from datetime import datetime, timedelta

import numpy as np

from .core import BktParams
from .data import InteractionRecord

_BASE_TIME = datetime(2024, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class SimConfig:
    """Generative design: cohort sizes, true parameters, retention, and seed.

    ``params`` is a single :class:`BktParams` shared everywhere, or a dict
    keyed by KC id (``kc_0`` ...), or - when ``group_assignment`` maps
    students to group labels - a dict keyed by group label.
    """

    n_students: int
    n_problems: int
    n_kcs: int = 1
    params: object = None
    fraction: float = 1.0
    seed: int = 0
    group_assignment: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.n_students < 1 or self.n_problems < 1 or self.n_kcs < 1:
            raise ValueError("n_students, n_problems, and n_kcs must be positive")
        if not (0.0 < self.fraction <= 1.0):
            raise ValueError(f"fraction must lie in (0, 1], got {self.fraction}")
        if int(self.fraction * self.n_problems) < 1:
            raise ValueError("fraction * n_problems must retain at least one opportunity")
        if self.params is None:
            raise ValueError("params is required")
        vals = self.params.values() if isinstance(self.params, dict) else [self.params]
        for p in vals:
            if not isinstance(p, BktParams):
                raise ValueError(f"params entries must be BktParams, got {type(p)}")

    def params_for(self, kc: str, student: str) -> BktParams:
        if isinstance(self.params, dict):
            key = self.group_assignment.get(student) if self.group_assignment else kc
            if key not in self.params:
                raise ValueError(f"no parameters supplied for {key!r}")
            return self.params[key]
        return self.params


@dataclass
class SimResult:
    records: list
    latent: dict  # (kc, student) -> full int8 mastery chain, length n_problems
    config: SimConfig

    def latent_for_records(self) -> np.ndarray:
        """True mastery state aligned with each retained record."""
        out = np.empty(len(self.records), dtype=np.int8)
        for i, r in enumerate(self.records):
            t = int(r.problem.rsplit("_", 1)[1])
            out[i] = self.latent[(r.kc, r.student)][t]
        return out


def simulate(config: SimConfig) -> SimResult:
    """Sample latent mastery chains and responses, then thin by retention.

    Returns records in (student, kc, opportunity) order with synthetic
    one-minute timestamps indexed by the original opportunity, plus the
    full latent chains for oracle checks.
    """
    rng = np.random.default_rng(config.seed)
    n_keep = int(config.fraction * config.n_problems)
    records: list[InteractionRecord] = []
    latent: dict = {}
    row = 0
    for j in range(config.n_students):
        student = f"stu_{j}"
        group = config.group_assignment.get(student) if config.group_assignment else None
        for k in range(config.n_kcs):
            kc = f"kc_{k}"
            p = config.params_for(kc, student)
            chain = np.empty(config.n_problems, dtype=np.int8)
            state = 1 if rng.random() < p.pi_know else 0
            responses = np.empty(config.n_problems, dtype=np.int8)
            for t in range(config.n_problems):
                chain[t] = state
                if state == 1:
                    responses[t] = 1 if rng.random() < 1.0 - p.slip else 0
                else:
                    responses[t] = 1 if rng.random() < p.guess else 0
                if t < config.n_problems - 1:
                    if state == 1:
                        state = 0 if rng.random() < p.forget else 1
                    else:
                        state = 1 if rng.random() < p.learn else 0
            latent[(kc, student)] = chain
            kept = np.sort(rng.choice(config.n_problems, size=n_keep, replace=False))
            for t in kept:
                records.append(
                    InteractionRecord(
                        student=student,
                        problem=f"prob_{t}",
                        kc=kc,
                        correct=int(responses[t]),
                        order_key=_BASE_TIME + timedelta(minutes=int(t)),
                        row=row,
                        group=group,
                    )
                )
                row += 1
    return SimResult(records=records, latent=latent, config=config)


def assign_groups_by_block(n_students: int, labels) -> dict:
    """Deterministic contiguous-block assignment of students to group labels."""
    labels = list(labels)
    out = {}
    per = n_students / len(labels)
    for j in range(n_students):
        out[f"stu_{j}"] = labels[min(int(j / per), len(labels) - 1)]
    return out


def write_latent_csv(result: SimResult, path) -> None:
    """Companion CSV of the true mastery chains (one row per opportunity)."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["student_id", "kc_id", "problem_id", "latent"])
        for (kc, student), chain in sorted(result.latent.items()):
            for t, state in enumerate(chain):
                writer.writerow([student, kc, f"prob_{t}", int(state)])
