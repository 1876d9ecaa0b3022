"""Domain data model, CSV ingestion, and validation.

A study is a collection of subjects, each carrying a baseline value and an
ordered series of post-baseline change-from-baseline observations for two
endpoints (``x`` and ``y``).  The two series may be observed at different
times and have different lengths.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

__all__ = [
    "SubjectRecord",
    "ValidationError",
    "Dataset",
    "EndpointHypers",
    "ModelConfig",
    "IngestError",
    "ingest_dataset",
    "write_dataset_csv",
    "validate_dataset",
]


class IngestError(ValueError):
    """Raised when a dataset CSV cannot be parsed into a valid Dataset."""


class ValidationError(ValueError):
    """Raised when a Dataset fails its invariants at a point of use."""


@dataclass(frozen=True)
class SubjectRecord:
    """One participant: site, baselines, and timed observations per endpoint.

    Series hold ``(time, change_from_baseline)`` pairs with strictly
    increasing positive times; time 0 is the baseline and is stored
    separately.  ``arm`` is informational only and never used in fitting.
    """

    subject_id: str
    site: int
    baseline_x: float
    baseline_y: float
    series_x: tuple[tuple[float, float], ...]
    series_y: tuple[tuple[float, float], ...]
    arm: str | None = None


@dataclass(frozen=True)
class Dataset:
    subjects: tuple[SubjectRecord, ...]
    n_sites: int
    metadata: dict[str, str] = field(default_factory=dict)

    def subject(self, subject_id: str) -> SubjectRecord:
        for s in self.subjects:
            if s.subject_id == subject_id:
                return s
        raise KeyError(subject_id)


@dataclass(frozen=True)
class EndpointHypers:
    """Appendix-style hyperparameters for one endpoint.

    All ``gamma_*`` values are shared shape/rate parameters of the gamma
    hyperpriors on the corresponding precisions; ``mu_0base`` and
    ``gamma_0base`` parameterize the prior on the common baseline slope.
    """

    gamma_0: float = 0.01
    gamma_1: float = 0.01
    gamma_2: float = 0.01
    gamma_sc: float = 0.01
    gamma_w: float = 0.01
    gamma_e: float = 0.01
    mu_0base: float = 0.0
    gamma_0base: float = 0.01

    def validate(self) -> None:
        for name in ("gamma_0", "gamma_1", "gamma_2", "gamma_sc",
                     "gamma_w", "gamma_e", "gamma_0base"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")


@dataclass(frozen=True)
class ModelConfig:
    """Model size and prior hyperparameters.

    ``n_classes`` is the truncation level of the symmetric-Dirichlet mixture.
    ``alpha_lo``/``alpha_hi`` bound the uniform prior on the concentration;
    the lower bound must stay >= 1 for numerical stability of the
    Dirichlet(alpha/C, ..., alpha/C) weight prior.

    The ``fix_*`` switches clamp parts of the model for reduced-form runs
    (used by calibration tests): clamped effects are held at zero and their
    precisions are not updated.
    """

    n_classes: int
    x: EndpointHypers = field(default_factory=EndpointHypers)
    y: EndpointHypers = field(default_factory=EndpointHypers)
    alpha_lo: float = 1.0
    alpha_hi: float = 3.0
    fix_site_effects: bool = False
    fix_subject_effects: bool = False
    fix_residual_precision: float | None = None
    fix_hyper_precisions: bool = False

    def __post_init__(self) -> None:
        # n_classes == 1 is allowed: the single-class reduction is the
        # calibration target for the conjugate-regression check.
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.alpha_lo < 1.0:
            raise ValueError("alpha_lo must be >= 1 (stability of the weight prior)")
        if self.alpha_lo >= self.alpha_hi:
            raise ValueError("alpha_lo must be < alpha_hi")
        self.x.validate()
        self.y.validate()

    def hypers(self, endpoint: str) -> EndpointHypers:
        if endpoint == "x":
            return self.x
        if endpoint == "y":
            return self.y
        raise ValueError(f"unknown endpoint {endpoint!r}")


_HEADER = ["subject_id", "site", "endpoint", "time", "baseline", "value"]


def ingest_dataset(source: io.TextIOBase | str) -> Dataset:
    """Parse a long-format CSV stream into a Dataset.

    One row per observation: ``subject_id,site,endpoint,time,baseline,value``
    with ``endpoint`` in {x, y}.  Rows are grouped per subject, series sorted
    by time, and the site count taken as the maximum site index seen.

    The baseline for a (subject, endpoint) comes either from the ``baseline``
    column (repeated on each row) or from a row with ``time == 0`` whose
    ``value`` is the baseline; the two mechanisms must agree when both are
    present.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError("empty input: missing header row") from None
    header = [h.strip().lstrip("﻿") for h in header]
    if header != _HEADER:
        raise IngestError(f"bad header {header!r}, expected {_HEADER!r}")

    # subject_id -> {"site": int, "x": {time: value}, ...}
    acc: dict[str, dict] = {}
    order: list[str] = []
    n_rows = 0
    for lineno, row in enumerate(reader, start=2):
        if not row or (len(row) == 1 and not row[0].strip()):
            continue
        if len(row) != 6:
            raise IngestError(f"line {lineno}: expected 6 fields, got {len(row)}")
        sid, site_s, endpoint, time_s, base_s, value_s = (f.strip() for f in row)
        if endpoint not in ("x", "y"):
            raise IngestError(f"line {lineno}: endpoint must be 'x' or 'y', got {endpoint!r}")
        try:
            site = int(site_s)
            time = float(time_s)
            baseline = float(base_s) if base_s else None
            value = float(value_s)
        except ValueError as exc:
            raise IngestError(f"line {lineno}: {exc}") from None
        if sid not in acc:
            acc[sid] = {"site": site, "x": {}, "y": {},
                        "baseline_x": None, "baseline_y": None, "arm": None}
            order.append(sid)
        rec = acc[sid]
        if rec["site"] != site:
            raise IngestError(f"line {lineno}: subject {sid!r} listed under two sites")
        key = f"baseline_{endpoint}"
        if time == 0:
            baseline = value  # a time-0 row carries the baseline in `value`
        if baseline is not None:
            if rec[key] is None:
                rec[key] = baseline
            elif rec[key] != baseline:
                raise IngestError(f"line {lineno}: inconsistent baseline for subject {sid!r}")
        if time == 0:
            continue
        if time < 0:
            raise IngestError(f"line {lineno}: negative observation time")
        if time in rec[endpoint]:
            raise IngestError(f"line {lineno}: duplicate (subject {sid!r}, "
                              f"endpoint {endpoint}, time {time})")
        rec[endpoint][time] = value
        n_rows += 1

    if not acc:
        raise IngestError("empty dataset: no observation rows")

    subjects = []
    for sid in sorted(order):
        rec = acc[sid]
        bx = rec["baseline_x"]
        by = rec["baseline_y"]
        if rec["x"] and bx is None:
            raise IngestError(f"subject {sid!r}: missing baseline for endpoint x")
        if rec["y"] and by is None:
            raise IngestError(f"subject {sid!r}: missing baseline for endpoint y")
        subjects.append(SubjectRecord(
            subject_id=sid,
            site=rec["site"],
            baseline_x=0.0 if bx is None else bx,
            baseline_y=0.0 if by is None else by,
            series_x=tuple(sorted(rec["x"].items())),
            series_y=tuple(sorted(rec["y"].items())),
        ))
    n_sites = max(s.site for s in subjects)
    return Dataset(subjects=tuple(subjects), n_sites=n_sites,
                   metadata={"n_rows": str(n_rows)})


def write_dataset_csv(d: Dataset, sink: io.TextIOBase) -> None:
    """Emit the long-format CSV accepted by :func:`ingest_dataset`."""
    writer = csv.writer(sink, lineterminator="\n")
    writer.writerow(_HEADER)
    for s in sorted(d.subjects, key=lambda r: r.subject_id):
        for endpoint, series, baseline in (("x", s.series_x, s.baseline_x),
                                           ("y", s.series_y, s.baseline_y)):
            for t, v in series:
                writer.writerow([s.subject_id, s.site, endpoint,
                                 repr(t), repr(baseline), repr(v)])


def validate_dataset(d: Dataset) -> list[str]:
    """Check SubjectRecord invariants; returns human-readable violations."""
    violations: list[str] = []
    seen: set[str] = set()
    for s in d.subjects:
        if s.subject_id in seen:
            violations.append(f"subject {s.subject_id!r}: duplicate subject_id")
        seen.add(s.subject_id)
        if not (1 <= s.site <= d.n_sites):
            violations.append(f"subject {s.subject_id!r}: site out of range "
                              f"({s.site} not in 1..{d.n_sites})")
        for name, series in (("series_x", s.series_x), ("series_y", s.series_y)):
            times = [t for t, _ in series]
            if any(t <= 0 for t in times):
                violations.append(f"subject {s.subject_id!r}: {name} has non-positive time")
            if any(b <= a for a, b in zip(times, times[1:])):
                violations.append(f"subject {s.subject_id!r}: {name} non-increasing times")
    if d.n_sites < 1:
        violations.append("dataset: n_sites must be >= 1")
    return violations
