"""Ingestion of long-format interaction logs into per-(KC, student) sequences.

Input is a UTF-8 CSV with a header row.  A :class:`ColumnMapping` names the
columns that carry the student, problem, KC, correctness, ordering key, and
optionally a group id and covariates; any extra columns are ignored.  The
ordering column may hold ISO-8601 timestamps or integers and is
auto-detected unless an explicit ``order_type`` is passed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np

REQUIRED_FIELDS = ("student_id", "problem_id", "kc_id", "correctness", "order")


class SchemaError(ValueError):
    """The file does not provide the mapped columns."""


class RowError(ValueError):
    """A data row failed validation; the message cites the 1-based data row."""


@dataclass(frozen=True)
class ColumnMapping:
    """Maps dataset column names onto the roles the model needs."""

    student_id: str
    problem_id: str
    kc_id: str
    correctness: str
    order: str
    group_id: str | None = None
    covariates: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "covariates", tuple(self.covariates))
        names = [self.student_id, self.problem_id, self.kc_id, self.correctness, self.order]
        if self.group_id is not None:
            names.append(self.group_id)
        names.extend(self.covariates)
        if len(set(names)) != len(names):
            raise ValueError(f"mapped column names must be distinct, got {names}")

    @classmethod
    def default(cls) -> "ColumnMapping":
        return cls(
            student_id="student_id",
            problem_id="problem_id",
            kc_id="kc_id",
            correctness="correct",
            order="timestamp",
        )


@dataclass(frozen=True)
class InteractionRecord:
    """One observed response with its ordering and grouping keys."""

    student: str
    problem: str
    kc: str
    correct: int
    order_key: object
    row: int  # 0-based position in the source, used for stable tie-breaks
    group: str | None = None
    covariates: tuple[float, ...] | None = None


def _parse_correct(raw, row_no: int) -> int:
    s = str(raw).strip()
    if s == "0":
        return 0
    if s == "1":
        return 1
    raise RowError(f"row {row_no}: correctness must be 0 or 1, got {raw!r}")


def _detect_order_type(value: str) -> str:
    try:
        int(value)
        return "int"
    except ValueError:
        pass
    try:
        datetime.fromisoformat(value)
        return "timestamp"
    except ValueError:
        raise ValueError(
            f"cannot detect order column type from {value!r}; expected an integer or ISO-8601 timestamp"
        )


def _parse_order(raw: str, order_type: str, row_no: int):
    s = str(raw).strip()
    try:
        if order_type == "int":
            return int(s)
        return datetime.fromisoformat(s)
    except ValueError:
        raise RowError(f"row {row_no}: cannot parse order key {raw!r} as {order_type}")


def load_interactions(
    path, mapping: ColumnMapping, order_type: str = "auto"
) -> list[InteractionRecord]:
    """Read a CSV interaction log and validate every row.

    ``order_type`` is ``auto`` (detect from the first data row), ``int``,
    or ``timestamp``.  Raises :class:`SchemaError` when a mapped column is
    missing and :class:`RowError` (citing the 1-based data row) for
    non-binary correctness or unparseable order keys.
    """
    if order_type not in ("auto", "int", "timestamp"):
        raise ValueError(f"order_type must be auto, int, or timestamp, got {order_type!r}")
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise SchemaError(f"{path}: empty file, expected a header row")
        header = set(reader.fieldnames)
        needed = [mapping.student_id, mapping.problem_id, mapping.kc_id,
                  mapping.correctness, mapping.order]
        if mapping.group_id is not None:
            needed.append(mapping.group_id)
        needed.extend(mapping.covariates)
        for col in needed:
            if col not in header:
                raise SchemaError(f"{path}: missing mapped column {col!r}")

        for idx, row in enumerate(reader):
            row_no = idx + 1
            if order_type == "auto":
                order_type = _detect_order_type(str(row[mapping.order]).strip())
            correct = _parse_correct(row[mapping.correctness], row_no)
            order_key = _parse_order(row[mapping.order], order_type, row_no)
            covs = None
            if mapping.covariates:
                try:
                    covs = tuple(float(row[c]) for c in mapping.covariates)
                except ValueError:
                    raise RowError(f"row {row_no}: covariates must be numeric")
            records.append(
                InteractionRecord(
                    student=str(row[mapping.student_id]),
                    problem=str(row[mapping.problem_id]),
                    kc=str(row[mapping.kc_id]),
                    correct=correct,
                    order_key=order_key,
                    row=idx,
                    group=(str(row[mapping.group_id]) if mapping.group_id is not None else None),
                    covariates=covs,
                )
            )
    return records


@dataclass
class Sequence:
    """Ordered responses of one student on one KC."""

    kc: str
    student: str
    y: np.ndarray
    problems: list[str]
    order_keys: list
    rows: list[int]
    group: str | None = None
    covariates: tuple[float, ...] | None = None

    def __len__(self):
        return len(self.y)


@dataclass
class SequenceSet:
    """All retained sequences plus a report of what was filtered out.

    Sequences are sorted by (kc, student) so every downstream computation
    has a deterministic order.  Immutable by convention; nothing mutates a
    built set.
    """

    sequences: list[Sequence]
    dropped_short: int = 0
    dropped_by_kc: dict = field(default_factory=dict)
    min_length: int = 1

    @property
    def kcs(self) -> list[str]:
        seen = {}
        for s in self.sequences:
            seen.setdefault(s.kc, None)
        return sorted(seen)

    @property
    def n_records(self) -> int:
        return sum(len(s) for s in self.sequences)

    def for_kc(self, kc: str) -> "SequenceSet":
        subset = [s for s in self.sequences if s.kc == kc]
        return SequenceSet(
            sequences=subset,
            dropped_short=self.dropped_by_kc.get(kc, 0),
            dropped_by_kc={kc: self.dropped_by_kc.get(kc, 0)},
            min_length=self.min_length,
        )

    def group_labels(self) -> list[str]:
        labels = sorted({s.group for s in self.sequences if s.group is not None})
        return labels

    def to_records(self) -> list[InteractionRecord]:
        """Flatten back to long format (used for round-trips and exports)."""
        out = []
        for s in self.sequences:
            for i in range(len(s)):
                out.append(
                    InteractionRecord(
                        student=s.student,
                        problem=s.problems[i],
                        kc=s.kc,
                        correct=int(s.y[i]),
                        order_key=s.order_keys[i],
                        row=s.rows[i],
                        group=s.group,
                        covariates=s.covariates,
                    )
                )
        return out


def build_sequences(
    records, require_group: bool = False, min_length: int = 1
) -> SequenceSet:
    """Group records into per-(KC, student) sequences sorted by order key.

    Ties on the order key keep the original file order (stable sort).
    Sequences shorter than ``min_length`` are dropped and counted in the
    returned set's report.  With ``require_group`` every record must carry
    a group id, and a student may not appear under two groups within one
    KC; a student's covariates must be constant across their records.
    """
    if min_length < 1:
        raise ValueError(f"min_length must be >= 1, got {min_length}")
    buckets: dict[tuple[str, str], list[InteractionRecord]] = {}
    for rec in records:
        if require_group and rec.group is None:
            raise ValueError(f"record at row {rec.row + 1} lacks a group id")
        buckets.setdefault((rec.kc, rec.student), []).append(rec)

    sequences = []
    dropped = 0
    dropped_by_kc: dict[str, int] = {}
    for (kc, student) in sorted(buckets):
        recs = buckets[(kc, student)]
        recs.sort(key=lambda r: (r.order_key, r.row))
        groups = {r.group for r in recs if r.group is not None}
        if len(groups) > 1:
            raise ValueError(
                f"student {student!r} is assigned to multiple groups {sorted(groups)} within KC {kc!r}"
            )
        covs = {r.covariates for r in recs if r.covariates is not None}
        if len(covs) > 1:
            raise ValueError(f"student {student!r} has conflicting covariate vectors")
        if len(recs) < min_length:
            dropped += 1
            dropped_by_kc[kc] = dropped_by_kc.get(kc, 0) + 1
            continue
        sequences.append(
            Sequence(
                kc=kc,
                student=student,
                y=np.array([r.correct for r in recs], dtype=np.int8),
                problems=[r.problem for r in recs],
                order_keys=[r.order_key for r in recs],
                rows=[r.row for r in recs],
                group=(next(iter(groups)) if groups else None),
                covariates=(next(iter(covs)) if covs else None),
            )
        )
    return SequenceSet(
        sequences=sequences,
        dropped_short=dropped,
        dropped_by_kc=dropped_by_kc,
        min_length=min_length,
    )


def split_by_student(records, test_fraction: float, seed: int):
    """Partition records into train/test with every student on one side only.

    The test side gets round(test_fraction * n_students) students, clamped
    so both sides stay non-empty; assignment is a seeded permutation of the
    sorted student ids, so the split is reproducible.
    """
    if not (0.0 < test_fraction < 1.0):
        raise ValueError(f"test_fraction must lie in (0, 1), got {test_fraction}")
    students = sorted({r.student for r in records})
    if len(students) < 2:
        raise ValueError("need at least 2 distinct students to split")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(students))
    n_test = int(round(test_fraction * len(students)))
    n_test = min(max(n_test, 1), len(students) - 1)
    test_students = {students[i] for i in perm[:n_test]}
    train = [r for r in records if r.student not in test_students]
    test = [r for r in records if r.student in test_students]
    return train, test


def write_interactions_csv(records, path, mapping: ColumnMapping | None = None) -> None:
    """Write records back to the long CSV format ``load_interactions`` reads."""
    mapping = mapping or ColumnMapping.default()
    fieldnames = [mapping.student_id, mapping.problem_id, mapping.correctness,
                  mapping.order, mapping.kc_id]
    if mapping.group_id is not None:
        fieldnames.append(mapping.group_id)
    fieldnames.extend(mapping.covariates)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(fieldnames)
        for r in records:
            key = r.order_key
            if isinstance(key, datetime):
                key = key.isoformat(sep=" ")
            row = [r.student, r.problem, r.correct, key, r.kc]
            if mapping.group_id is not None:
                row.append(r.group if r.group is not None else "")
            if mapping.covariates:
                row.extend(r.covariates or [""] * len(mapping.covariates))
            writer.writerow(row)
