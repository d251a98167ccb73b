"""CSV readers and writers for datasets.

Covariates: header row, then one row of ``p`` numbers per sample.
Responses: long format with header ``sample_id,row,col,value`` and 0-based
indices. Each upper-triangle cell ``row <= col`` must appear exactly once;
lower-triangle cells are optional and, when given, must match their mirror.
"""

from __future__ import annotations

import csv

import numpy as np

from .errors import AsymmetricResponse, MissingCell, NotPositiveDefinite, ParseError
from .regression import Dataset

RESPONSE_HEADER = ["sample_id", "row", "col", "value"]


def _read_rows(path: str) -> tuple[list[str], list[tuple[int, list[str]]]]:
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [(reader.line_num, r) for r in reader if r and any(c.strip() for c in r)]
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}", file=path) from exc
    if header is None:
        raise ParseError(f"{path} is empty", file=path)
    return [h.strip() for h in header], rows


def load_covariates(path: str) -> np.ndarray:
    header, rows = _read_rows(path)
    p = len(header)
    X = np.empty((len(rows), p))
    for k, (line, r) in enumerate(rows):
        if len(r) != p:
            raise ParseError(f"{path}:{line}: expected {p} columns, got {len(r)}", file=path, line=line)
        for c, cell in enumerate(r):
            try:
                X[k, c] = float(cell)
            except ValueError:
                raise ParseError(f"{path}:{line}: column {c} is not a number: {cell!r}", file=path, line=line, col=c) from None
    return X


def load_responses(path: str, n: int | None = None, tol: float = 1e-10) -> np.ndarray:
    header, rows = _read_rows(path)
    if header != RESPONSE_HEADER:
        raise ParseError(f"{path}: header must be {','.join(RESPONSE_HEADER)}", file=path, line=1)
    cells: dict[tuple[int, int, int], float] = {}
    for line, r in rows:
        if len(r) != 4:
            raise ParseError(f"{path}:{line}: expected 4 columns", file=path, line=line)
        try:
            s, i, j = (int(c) for c in r[:3])
            v = float(r[3])
        except ValueError:
            raise ParseError(f"{path}:{line}: malformed row {r!r}", file=path, line=line) from None
        if min(s, i, j) < 0:
            raise ParseError(f"{path}:{line}: negative index", file=path, line=line)
        if (s, i, j) in cells:
            raise ParseError(f"{path}:{line}: duplicate cell ({s}, {i}, {j})", file=path, line=line)
        cells[(s, i, j)] = v
    if not cells:
        raise ParseError(f"{path}: no response cells", file=path)
    ids = sorted({s for s, _, _ in cells})
    count = n if n is not None else len(ids)
    if ids != list(range(count)):
        raise ParseError(f"{path}: sample ids must be 0..{count - 1}", file=path)
    d = 1 + max(max(i, j) for _, i, j in cells)
    Q = np.empty((count, d, d))
    for s in range(count):
        for i in range(d):
            for j in range(i, d):
                up = cells.get((s, i, j))
                if up is None:
                    raise MissingCell(f"sample {s}: cell ({i}, {j}) missing", sample_id=s, row=i, col=j)
                low = cells.get((s, j, i))
                if low is not None and abs(low - up) > tol * (1.0 + abs(up)):
                    raise AsymmetricResponse(f"sample {s}: cells ({i}, {j}) and ({j}, {i}) differ", sample_id=s, row=i, col=j)
                Q[s, i, j] = Q[s, j, i] = up
    return Q


def load_dataset(covariates_path: str, responses_path: str) -> Dataset:
    """Read a dataset from the two CSV files.

    Raises
    ------
    ParseError, MissingCell, AsymmetricResponse
        On malformed input, located by file and line or by cell.
    NotPositiveDefinite
        Naming the offending ``sample_id``.
    """
    X = load_covariates(covariates_path)
    Q = load_responses(responses_path, n=X.shape[0])
    lam = np.linalg.eigvalsh(Q)[:, 0]
    bad = np.flatnonzero(lam <= 1e-12)
    if bad.size:
        raise NotPositiveDefinite(f"response of sample {int(bad[0])} is not positive definite", sample_id=int(bad[0]))
    return Dataset(X, Q)


def save_dataset(data: Dataset, covariates_path: str, responses_path: str) -> None:
    """Write the dataset with 17 significant digits (upper triangle only)."""
    with open(covariates_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(data.p)])
        for row in data.covariates:
            w.writerow([f"{v:.17g}" for v in row])
    with open(responses_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESPONSE_HEADER)
        for s, Q in enumerate(data.responses):
            for i in range(data.d):
                for j in range(i, data.d):
                    w.writerow([s, i, j, f"{Q[i, j]:.17g}"])
