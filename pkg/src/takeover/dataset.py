"""Variable schema, CSV ingestion, preprocessing and synthetic data.

Predictor values are held in a float matrix where ``NaN`` marks a missing
cell. Coded variables keep their integer codes; trees treat them as ordered
numeric features.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterator, Mapping, Sequence

import numpy as np

from .errors import DatasetError

BINARY = "binary"
ORDINAL = "ordinal"
CONTINUOUS = "continuous"
KINDS = (BINARY, ORDINAL, CONTINUOUS)

TARGET = "takeover_time"
MERGED_TIME_BUDGET = "TBTC&TBTB"
DEFAULT_OUTLIER_THRESHOLD = 9.0


@dataclass(frozen=True)
class VariableSpec:
    name: str
    kind: str
    levels: tuple[int, ...] = ()
    unit: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DatasetError(f"variable {self.name}: unknown kind {self.kind!r}")
        levels = tuple(int(v) for v in self.levels)
        object.__setattr__(self, "levels", levels)
        if self.kind == BINARY and levels != (0, 1):
            raise DatasetError(f"variable {self.name}: binary levels must be (0, 1)")
        if self.kind == ORDINAL:
            if not levels or levels[0] not in (0, 1) or levels != tuple(
                range(levels[0], levels[0] + len(levels))
            ):
                raise DatasetError(
                    f"variable {self.name}: ordinal levels must be contiguous from 0 or 1"
                )
        if self.kind == CONTINUOUS and levels:
            raise DatasetError(f"variable {self.name}: continuous variables take no levels")

    @property
    def coded(self) -> bool:
        return self.kind != CONTINUOUS

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "levels": list(self.levels), "unit": self.unit}


def _binary(name: str, unit: str = "0 = no; 1 = yes") -> VariableSpec:
    return VariableSpec(name, BINARY, (0, 1), unit)


# The 18 study variables, in table order.
DEFAULT_SCHEMA: tuple[VariableSpec, ...] = (
    VariableSpec("AGE", CONTINUOUS, (), "years"),
    _binary("LAD", "0 = L2; 1 = L3 and above"),
    VariableSpec("SIM", ORDINAL, (0, 1, 2), "0 = low; 1 = medium; 2 = high fidelity"),
    _binary("TOR_V"),
    _binary("TOR_A"),
    _binary("TOR_VT"),
    _binary("TOR_P"),
    _binary("NDT_V"),
    _binary("NDT_A"),
    _binary("NDT_M"),
    _binary("NDT_C", "0 = normal; 1 = high cognitive load"),
    _binary("HAND", "0 = hands-free; 1 = handheld"),
    _binary("NDT_P"),
    VariableSpec("TBTC", CONTINUOUS, (), "seconds"),
    VariableSpec("TBTB", CONTINUOUS, (), "seconds"),
    VariableSpec("URG", ORDINAL, (0, 1, 2), "0 = low (>15 s); 1 = medium (8-15 s); 2 = high (<=8 s)"),
    VariableSpec("DRE", ORDINAL, (1, 2, 3), "1 = low; 2 = medium; 3 = high complexity"),
    _binary("IRU"),
)


def check_schema(schema: Sequence[VariableSpec]) -> tuple[VariableSpec, ...]:
    schema = tuple(schema)
    names = [v.name for v in schema]
    dupes = sorted({n for n in names if names.count(n) > 1})
    if dupes:
        raise DatasetError(f"duplicate variable names in schema: {dupes}")
    if TARGET in names:
        raise DatasetError(f"schema may not contain the target column {TARGET!r}")
    return schema


def schema_fingerprint(schema: Sequence[VariableSpec]) -> str:
    payload = json.dumps([v.to_dict() for v in schema], sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class Sample:
    values: tuple[float | None, ...]
    target: float


@dataclass(frozen=True, eq=False)
class Dataset:
    """Immutable table of predictors ``X`` (NaN = missing) and targets ``y``."""

    schema: tuple[VariableSpec, ...]
    X: np.ndarray
    y: np.ndarray
    provenance: str = "user"

    def __post_init__(self):
        schema = check_schema(self.schema)
        y = np.array(self.y, dtype=float, copy=True).reshape(-1)
        X = np.array(self.X, dtype=float, copy=True)
        if X.size == 0:
            X = X.reshape(-1 if len(schema) else y.shape[0], len(schema))
        else:
            X = X.reshape(-1, len(schema))
        if X.shape[0] != y.shape[0]:
            raise DatasetError(f"{X.shape[0]} predictor rows but {y.shape[0]} targets")
        if not np.all(np.isfinite(y)) or np.any(y <= 0):
            bad = int(np.flatnonzero(~(np.isfinite(y) & (y > 0)))[0])
            raise DatasetError(f"row {bad}: target must be positive and finite, got {y[bad]}")
        for j, var in enumerate(schema):
            col = X[:, j]
            present = col[~np.isnan(col)]
            if np.any(np.isinf(present)):
                raise DatasetError(f"column {var.name}: infinite value")
            if var.coded and present.size and not np.all(np.isin(present, var.levels)):
                i = int(np.flatnonzero(~np.isnan(col) & ~np.isin(col, var.levels))[0])
                raise DatasetError(
                    f"row {i}, column {var.name}: code {col[i]:g} not in {set(var.levels)}"
                )
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "schema", schema)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    def __len__(self) -> int:
        return self.y.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.schema == other.schema
            and self.provenance == other.provenance
            and np.array_equal(self.X, other.X, equal_nan=True)
            and np.array_equal(self.y, other.y)
        )

    @property
    def names(self) -> list[str]:
        return [v.name for v in self.schema]

    @property
    def rows(self) -> Iterator[Sample]:
        for xi, yi in zip(self.X, self.y):
            yield Sample(tuple(None if math.isnan(v) else float(v) for v in xi), float(yi))

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DatasetError(f"unknown variable {name!r}; schema has {self.names}") from None

    def select(self, features: Sequence[str]) -> Dataset:
        """Project onto a subset of predictor columns, in the given order."""
        idx = [self.index(f) for f in features]
        return Dataset(tuple(self.schema[i] for i in idx), self.X[:, idx], self.y, self.provenance)

    def subset(self, rows) -> Dataset:
        return Dataset(self.schema, self.X[rows], self.y[rows], self.provenance)

    def fingerprint(self) -> str:
        h = hashlib.sha256(schema_fingerprint(self.schema).encode())
        h.update(np.ascontiguousarray(self.X).tobytes())
        h.update(np.ascontiguousarray(self.y).tobytes())
        return h.hexdigest()[:16]


@dataclass(frozen=True)
class SummaryStats:
    row_count: int
    missing_fraction: float
    target_min: float
    target_max: float
    target_mean: float
    histogram: list[int]

    def to_dict(self) -> dict:
        return {
            "row_count": self.row_count,
            "missing_fraction": self.missing_fraction,
            "target_min": self.target_min,
            "target_max": self.target_max,
            "target_mean": self.target_mean,
            "histogram": list(self.histogram),
        }


def _parse_cell(text: str, row: int, col: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise DatasetError(f"row {row}, column {col}: non-numeric cell {text!r}") from None
    if not math.isfinite(value):
        raise DatasetError(f"row {row}, column {col}: non-finite cell {text!r}")
    return value


def parse_table(
    text: str, schema: Sequence[VariableSpec] = DEFAULT_SCHEMA, target: str = TARGET, provenance: str = "user"
) -> Dataset:
    """Parse CSV text into a :class:`Dataset`.

    The header must name every schema variable and the target column, in any
    order. Empty cells are missing values; the target may not be missing.
    Row numbers in error messages are 1-based data rows (the header is row 0).
    """
    schema = check_schema(schema)
    if text.startswith("﻿"):
        text = text[1:]
    reader = csv.reader(io.StringIO(text, newline=""))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DatasetError("empty input: no header row") from None
    expected = [v.name for v in schema] + [target]
    if len(set(header)) != len(header) or set(header) != set(expected):
        missing = [c for c in expected if c not in header]
        extra = [c for c in header if c not in expected]
        raise DatasetError(
            f"header/schema mismatch: missing columns {missing}, unexpected columns {extra}"
        )
    order = [header.index(v.name) for v in schema]
    t_col = header.index(target)

    X_rows, y_rows = [], []
    for r, record in enumerate(reader, start=1):
        if not record or all(not c.strip() for c in record):
            continue
        if len(record) != len(header):
            raise DatasetError(f"row {r}: expected {len(header)} cells, found {len(record)}")
        cell = record[t_col].strip()
        if not cell:
            raise DatasetError(f"row {r}, column {target}: target is missing")
        y = _parse_cell(cell, r, target)
        if y <= 0:
            raise DatasetError(f"row {r}, column {target}: target must be positive, got {cell}")
        values = []
        for var, c in zip(schema, order):
            cell = record[c].strip()
            if not cell:
                values.append(np.nan)
                continue
            v = _parse_cell(cell, r, var.name)
            if var.coded and v not in var.levels:
                raise DatasetError(
                    f"row {r}, column {var.name}: code {cell} not in admissible codes "
                    f"{{{', '.join(map(str, var.levels))}}}"
                )
            values.append(v)
        X_rows.append(values)
        y_rows.append(y)
    X = np.array(X_rows, dtype=float).reshape(len(X_rows), len(schema))
    return Dataset(schema, X, np.array(y_rows, dtype=float), provenance)


def _fmt(v: float) -> str:
    if math.isnan(v):
        return ""
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return repr(float(v))


def to_csv(d: Dataset, target: str = TARGET) -> str:
    """Serialize with shortest round-trip float formatting and LF line ends."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(d.names + [target])
    for xi, yi in zip(d.X, d.y):
        w.writerow([_fmt(v) for v in xi] + [_fmt(yi)])
    return buf.getvalue()


def preprocess(
    d: Dataset,
    merge_time_budgets: bool = True,
    outlier_threshold: float = DEFAULT_OUTLIER_THRESHOLD,
) -> Dataset:
    """Merge TBTC/TBTB into one time-budget column and drop outlier targets.

    When both budgets are present in a row the merged value takes TBTC.
    Idempotent: a dataset that is already merged is left as is.
    """
    schema, X = list(d.schema), d.X
    names = d.names
    if merge_time_budgets and "TBTC" in names and "TBTB" in names:
        i, j = names.index("TBTC"), names.index("TBTB")
        merged = np.where(np.isnan(X[:, i]), X[:, j], X[:, i])
        keep = [k for k in range(len(schema)) if k != j]
        X = X.copy()
        X[:, i] = merged
        X = X[:, keep]
        schema[i] = VariableSpec(MERGED_TIME_BUDGET, CONTINUOUS, (), "seconds")
        schema = [schema[k] for k in keep]
    rows = d.y <= outlier_threshold
    return Dataset(tuple(schema), X[rows], d.y[rows], d.provenance)


def summarize(d: Dataset) -> SummaryStats:
    if len(d) == 0:
        raise DatasetError("cannot summarize an empty dataset")
    cells = d.X.size
    missing = float(np.isnan(d.X).sum() / cells) if cells else 0.0
    n_bins = int(math.floor(d.y.max())) + 1
    hist = np.bincount(np.floor(d.y).astype(int), minlength=n_bins)
    return SummaryStats(
        row_count=len(d),
        missing_fraction=missing,
        target_min=float(d.y.min()),
        target_max=float(d.y.max()),
        target_mean=float(d.y.mean()),
        histogram=[int(c) for c in hist],
    )


@dataclass(frozen=True)
class GeneratorSpec:
    """Ground-truth recipe for synthetic takeover times.

    ``piecewise`` maps a continuous variable to ``(knots, values)`` for linear
    interpolation (flat beyond the end knots). ``offsets`` maps a coded
    variable to per-code additive effects. ``interactions`` holds
    ``(var_a, code_a, var_b, code_b, effect)`` terms added when both
    variables take the named codes. ``missing_rate`` is a single rate or a
    per-variable mapping; missingness never touches the target.
    """

    intercept: float = 1.0
    piecewise: Mapping[str, tuple[Sequence[float], Sequence[float]]] = field(default_factory=dict)
    offsets: Mapping[str, Mapping[int, float]] = field(default_factory=dict)
    interactions: Sequence[tuple[str, int, str, int, float]] = ()
    noise_sd: float = 0.0
    missing_rate: float | Mapping[str, float] = 0.0
    n_rows: int = 519
    ranges: Mapping[str, tuple[float, float]] = field(default_factory=dict)

    def variables(self) -> set[str]:
        used = set(self.piecewise) | set(self.offsets)
        for a, _, b, _, _ in self.interactions:
            used |= {a, b}
        return used


# Continuous sampling ranges by unit when the generator gives none.
_UNIT_RANGES = {"years": (18.0, 75.0), "seconds": (2.0, 30.0)}
MIN_TARGET = 0.01


def make_target_function(spec: GeneratorSpec, names: Sequence[str]) -> Callable[[np.ndarray], np.ndarray]:
    """Return ``f(X) -> y`` evaluating the noiseless ground truth on complete rows."""
    col = {n: i for i, n in enumerate(names)}
    unknown = sorted(spec.variables() - set(col))
    if unknown:
        raise DatasetError(f"generator references variables not in schema: {unknown}")

    def f(X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(X)
        y = np.full(X.shape[0], float(spec.intercept))
        for name, (knots, values) in spec.piecewise.items():
            y += np.interp(X[:, col[name]], np.asarray(knots, float), np.asarray(values, float))
        for name, table in spec.offsets.items():
            x = X[:, col[name]]
            for code, effect in table.items():
                y += np.where(x == code, float(effect), 0.0)
        for a, ca, b, cb, effect in spec.interactions:
            y += np.where((X[:, col[a]] == ca) & (X[:, col[b]] == cb), float(effect), 0.0)
        return y

    return f


def synthesize(
    schema: Sequence[VariableSpec], spec: GeneratorSpec, seed: int
) -> tuple[Dataset, Callable[[np.ndarray], np.ndarray]]:
    """Draw a synthetic dataset; returns it with its noiseless target function."""
    schema = check_schema(schema)
    names = [v.name for v in schema]
    if spec.n_rows <= 0:
        raise DatasetError(f"row count must be positive, got {spec.n_rows}")
    rates = (
        {n: float(spec.missing_rate.get(n, 0.0)) for n in names}
        if isinstance(spec.missing_rate, Mapping)
        else {n: float(spec.missing_rate) for n in names}
    )
    for n, r in rates.items():
        if not 0.0 <= r <= 1.0:
            raise DatasetError(f"missingness rate for {n} must lie in [0, 1], got {r}")
    if spec.noise_sd < 0:
        raise DatasetError(f"noise standard deviation must be non-negative, got {spec.noise_sd}")
    f = make_target_function(spec, names)

    rng = np.random.default_rng(seed)
    n = spec.n_rows
    X = np.empty((n, len(schema)))
    for j, var in enumerate(schema):
        if var.coded:
            X[:, j] = rng.choice(np.asarray(var.levels, float), size=n)
        else:
            lo, hi = spec.ranges.get(var.name, _UNIT_RANGES.get(var.unit, (0.0, 1.0)))
            X[:, j] = np.round(rng.uniform(lo, hi, size=n), 2)
    y = f(X)
    if spec.noise_sd > 0:
        y = y + rng.normal(0.0, spec.noise_sd, size=n)
    y = np.maximum(y, MIN_TARGET)
    for j, name in enumerate(names):
        mask = rng.random(n) < rates[name]
        X[mask, j] = np.nan
    return Dataset(schema, X, y, "synthetic"), f
