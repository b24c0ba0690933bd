"""Long-format metric tables and their CSV form.

File layout::

    # config-hash: <16 hex digits>
    experiment,model,metric,abscissa,value,stderr,n
    fig3,mela,test_mse,0,0.2080...,0.0071...,1000

Floats are written with 17 significant digits, so parsing a file gives back
the exact float64 values.
"""

from __future__ import annotations

import csv
import math
from typing import Iterable, NamedTuple

HEADER = ("experiment", "model", "metric", "abscissa", "value", "stderr", "n")


class MetricRow(NamedTuple):
    experiment: str
    model: str
    metric: str
    abscissa: float
    value: float
    stderr: float
    n: int

    def key(self):
        return (self.experiment, self.model, self.metric, self.abscissa)


class MetricTable:
    """Rows sorted by (experiment, model, metric, abscissa); NaN is rejected."""

    def __init__(self, rows: Iterable[MetricRow] = ()):
        self._rows: list[MetricRow] = []
        for r in rows:
            self.add(*r)

    def add(self, experiment, model, metric, abscissa, value, stderr=0.0, n=1) -> None:
        row = MetricRow(str(experiment), str(model), str(metric), float(abscissa), float(value), float(stderr), int(n))
        for name in ("abscissa", "value", "stderr"):
            if math.isnan(getattr(row, name)):
                raise ValueError(f"NaN {name} for {row.model}/{row.metric} at {row.abscissa}")
        if row.n < 0:
            raise ValueError(f"negative count {row.n}")
        self._rows.append(row)

    def add_curve(self, experiment, model, metric, abscissae, values, stderrs, n) -> None:
        for a, v, e in zip(abscissae, values, stderrs):
            self.add(experiment, model, metric, a, v, e, n)

    @property
    def rows(self) -> list[MetricRow]:
        return sorted(self._rows, key=MetricRow.key)

    def select(self, model=None, metric=None) -> list[MetricRow]:
        return [r for r in self.rows if (model is None or r.model == model) and (metric is None or r.metric == metric)]

    def value(self, model, metric, abscissa) -> float:
        for r in self._rows:
            if r.model == model and r.metric == metric and r.abscissa == float(abscissa):
                return r.value
        raise KeyError((model, metric, abscissa))

    def __len__(self):
        return len(self._rows)

    def __eq__(self, other):
        return isinstance(other, MetricTable) and self.rows == other.rows


def fmt(x: float) -> str:
    """Shortest 17-significant-digit rendering; integral abscissae stay integral."""
    x = float(x)
    if x.is_integer() and abs(x) < 1e15:
        return str(int(x))
    return f"{x:.17g}"


def emit_metrics(table: MetricTable, path, config_hash: str) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config-hash: {config_hash}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HEADER)
        for r in table.rows:
            w.writerow([r.experiment, r.model, r.metric, fmt(r.abscissa), fmt(r.value), fmt(r.stderr), r.n])


def read_metrics(path) -> tuple[str, MetricTable]:
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline()
        if not first.startswith("# config-hash:"):
            raise ValueError(f"{path}: missing config-hash line")
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        table = MetricTable()
        for row in reader:
            e, m, k, a, v, s, n = row
            table.add(e, m, k, float(a), float(v), float(s), int(n))
    return first.split(":", 1)[1].strip(), table
