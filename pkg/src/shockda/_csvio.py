"""Small CSV helpers shared by the artifact writers.

Floats are written with 17 significant digits so every value round-trips
to the same float64 and regression comparisons can be byte-exact.
"""

from __future__ import annotations

import csv
from pathlib import Path


def fmt17(x: float) -> str:
    return format(float(x), ".17g")


def write_csv(path, header, rows) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
