"""Fixed-column CSV tables with 12 significant digits."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

__all__ = ["Table", "format_value"]


def format_value(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        # + 0.0 turns -0.0 into 0.0
        return f"{float(v) + 0.0:.12g}"
    return str(v)


@dataclass
class Table:
    columns: Sequence[str]
    rows: list = field(default_factory=list)

    def add(self, *values) -> None:
        if len(values) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} values, got {len(values)}")
        self.rows.append(values)

    def column(self, name: str) -> np.ndarray:
        i = list(self.columns).index(name)
        return np.array([r[i] for r in self.rows])

    def to_csv(self, target=None) -> str:
        """Write to a path or file object; always returns the CSV text."""
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(self.columns)
        for row in self.rows:
            wr.writerow([format_value(v) for v in row])
        text = buf.getvalue()
        if isinstance(target, (str, os.PathLike)):
            with open(target, "w", newline="") as fh:
                fh.write(text)
        elif target is not None:
            target.write(text)
        return text
