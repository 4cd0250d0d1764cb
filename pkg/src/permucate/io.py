"""Dataset CSV serialization.

Format: header ``x1,...,xd,a,y`` with an optional trailing ``tau_oracle``
column; floats are written with 17 significant digits.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dgp import Dataset
from .errors import DataError


def save_dataset(path, dataset: Dataset, include_oracle_tau: bool = True) -> None:
    d = dataset.d
    header = [f"x{j + 1}" for j in range(d)] + ["a", "y"]
    cols = [dataset.x, dataset.a[:, None], dataset.y[:, None]]
    if include_oracle_tau and dataset.oracle is not None:
        header.append("tau_oracle")
        cols.append(dataset.oracle.tau(dataset.x)[:, None])
    mat = np.hstack(cols)
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in mat:
            fh.write(",".join(f"{v:.17g}" for v in row) + "\n")


def load_dataset(path) -> tuple[Dataset, np.ndarray | None]:
    """Read a dataset CSV; returns (dataset, tau_oracle-or-None)."""
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such data file: {path}")
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        try:
            mat = np.loadtxt(fh, delimiter=",", ndmin=2)
        except ValueError as exc:
            raise DataError(f"malformed data file {path}: {exc}") from exc
    has_tau = header and header[-1] == "tau_oracle"
    body = header[:-1] if has_tau else header
    d = len(body) - 2
    expected = [f"x{j + 1}" for j in range(d)] + ["a", "y"]
    if d < 1 or body != expected or mat.shape[1] != len(header):
        raise DataError(
            f"data file {path} must have header x1..xd,a,y[,tau_oracle]"
        )
    a = mat[:, d]
    if not np.all(np.isin(a, (0.0, 1.0))):
        raise DataError("treatment column 'a' must be binary")
    dataset = Dataset(mat[:, :d], a, mat[:, d + 1])
    tau = mat[:, d + 2] if has_tau else None
    return dataset, tau
