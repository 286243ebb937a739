"""CSV ingestion with strict parsing (no imputation)."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from veil.errors import ConfigurationError


@dataclass
class Dataset:
    x: np.ndarray
    y: np.ndarray | None
    columns: list[str]
    kinds: list[str]  # "numeric" | "binary" per column of x
    target: str | None = None
    extra: dict = field(default_factory=dict)  # named side columns, e.g. sensitive attributes

    @property
    def n_rows(self) -> int:
        return self.x.shape[0]


def column_kind(values: np.ndarray) -> str:
    return "binary" if np.all((values == 0) | (values == 1)) else "numeric"


def ingest_csv(path, target: str | None = None, exclude=(), keep=()) -> Dataset:
    """Read a headed CSV of decimals.

    ``target`` names the label/target column; ``keep`` names side columns to
    return in ``Dataset.extra`` instead of the feature matrix; ``exclude``
    columns are dropped entirely. Rows keep file order.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ConfigurationError(f"{path}: empty file, expected a header row") from None
        rows = []
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ConfigurationError(f"{path}: row {r} has {len(row)} cells, header has {len(header)}")
            vals = []
            for c, cell in enumerate(row):
                cell = cell.strip()
                if cell == "":
                    raise ConfigurationError(f"{path}: missing value at row {r}, column {header[c]!r}")
                try:
                    vals.append(float(cell))
                except ValueError:
                    raise ConfigurationError(f"{path}: cannot parse {cell!r} at row {r}, column {header[c]!r}") from None
            rows.append(vals)
    if not rows:
        raise ConfigurationError(f"{path}: no data rows")
    table = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(table)):
        r, c = np.argwhere(~np.isfinite(table))[0]
        raise ConfigurationError(f"{path}: non-finite value at row {r + 2}, column {header[c]!r}")
    for name in (target, *keep, *exclude):
        if name is not None and name not in header:
            raise ConfigurationError(f"{path}: column {name!r} not in header")
    skip = set(exclude) | set(keep) | ({target} if target else set())
    feat = [i for i, h in enumerate(header) if h not in skip]
    x = table[:, feat]
    y = table[:, header.index(target)] if target else None
    extra = {k: table[:, header.index(k)] for k in keep}
    kinds = [column_kind(x[:, j]) for j in range(x.shape[1])]
    return Dataset(x, y, [header[i] for i in feat], kinds, target, extra)


def write_csv(path, x, columns, y=None, target: str = "target") -> None:
    x = np.asarray(x)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(([target] if y is not None else []) + list(columns))
        for i in range(x.shape[0]):
            lead = [repr(float(y[i]))] if y is not None else []
            w.writerow(lead + [repr(float(v)) for v in x[i]])
