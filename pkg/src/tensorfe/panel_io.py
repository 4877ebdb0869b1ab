"""Long-format CSV ingestion and export for multidimensional panels.

A panel CSV has one row per cell: ``d`` index columns, one outcome column,
and one column per regressor.  Index labels are arbitrary strings; each
dimension's labels are taken in order of first appearance, and the file must
contain every label combination exactly once (a complete grid).  Floats are
written back with full precision, so an export/reload roundtrip reproduces
the tensors bit for bit.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .errors import PanelFormatError
from .tensor_ops import as_tensor

_MAX_REPORTED = 10


@dataclass
class PanelFrame:
    """Index metadata for a densified panel."""

    dim_names: tuple[str, ...]
    dim_labels: list[list[str]]
    y_name: str
    x_names: tuple[str, ...]

    @property
    def shape(self) -> tuple[int, ...]:
        return tuple(len(labels) for labels in self.dim_labels)


def load_panel_csv(path, index_cols, y_col: str, x_cols) -> tuple[PanelFrame, np.ndarray, list[np.ndarray]]:
    """Densify a long-format panel CSV into tensors.

    Parameters
    ----------
    path : str or path-like
        CSV file with a header row.
    index_cols : sequence of str
        Names of the index columns, in dimension order.
    y_col : str
        Name of the outcome column.
    x_cols : sequence of str
        Names of the regressor columns (at least one).

    Raises
    ------
    PanelFormatError
        On missing columns, unparseable or non-finite values, duplicate
        cells, or an incomplete grid; messages cite the offending labels.
    """
    index_cols = list(index_cols)
    x_cols = list(x_cols)
    if not index_cols:
        raise PanelFormatError("need at least one index column")
    if not x_cols:
        raise PanelFormatError("need at least one regressor column")

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise PanelFormatError(f"{path}: empty file") from None
        positions = {name: i for i, name in enumerate(header)}
        missing_cols = [c for c in index_cols + [y_col] + x_cols if c not in positions]
        if missing_cols:
            raise PanelFormatError(f"{path}: missing column(s) {missing_cols}; header has {header}")
        idx_pos = [positions[c] for c in index_cols]
        val_pos = [positions[y_col]] + [positions[c] for c in x_cols]

        label_maps: list[dict[str, int]] = [{} for _ in index_cols]
        cells: dict[tuple[int, ...], tuple[float, ...]] = {}
        duplicates: list[tuple[str, ...]] = []
        for row_num, row in enumerate(reader, start=2):
            if len(row) < len(header):
                raise PanelFormatError(f"{path}:{row_num}: expected {len(header)} fields, got {len(row)}")
            labels = tuple(row[p] for p in idx_pos)
            key = tuple(
                label_maps[d].setdefault(lab, len(label_maps[d])) for d, lab in enumerate(labels)
            )
            try:
                values = tuple(float(row[p]) for p in val_pos)
            except ValueError as exc:
                raise PanelFormatError(f"{path}:{row_num}: {exc}") from None
            if not all(np.isfinite(v) for v in values):
                raise PanelFormatError(f"{path}:{row_num}: non-finite value at cell {labels}")
            if key in cells:
                if len(duplicates) < _MAX_REPORTED:
                    duplicates.append(labels)
            else:
                cells[key] = values

    if duplicates:
        raise PanelFormatError(f"{path}: duplicate cell(s), e.g. {duplicates}")
    dim_labels = [list(m) for m in label_maps]
    shape = tuple(len(labels) for labels in dim_labels)
    if any(s == 0 for s in shape):
        raise PanelFormatError(f"{path}: no data rows")
    expected = int(np.prod(shape))
    if len(cells) != expected:
        missing = []
        for key in itertools.product(*(range(s) for s in shape)):
            if key not in cells:
                missing.append(tuple(dim_labels[d][i] for d, i in enumerate(key)))
                if len(missing) >= _MAX_REPORTED:
                    break
        raise PanelFormatError(
            f"{path}: incomplete grid; {expected - len(cells)} of {expected} cells missing, "
            f"e.g. {missing}"
        )

    y = np.empty(shape)
    xs = [np.empty(shape) for _ in x_cols]
    for key, values in cells.items():
        y[key] = values[0]
        for k in range(len(x_cols)):
            xs[k][key] = values[k + 1]
    frame = PanelFrame(
        dim_names=tuple(index_cols),
        dim_labels=dim_labels,
        y_name=y_col,
        x_names=tuple(x_cols),
    )
    return frame, y, xs


def write_panel_csv(path, y, xs, *, dim_names=None, dim_labels=None, y_name: str = "y", x_names=None) -> None:
    """Export tensors to a long-format panel CSV (dimension 1 fastest).

    Values are written with ``repr`` so that reloading reproduces them
    exactly.  Default labels are 1-based integers.
    """
    y_arr = as_tensor(y, name="outcome", min_order=1)
    xs = [xs] if isinstance(xs, np.ndarray) else list(xs)
    xs = [as_tensor(xk, name=f"regressor {k + 1}") for k, xk in enumerate(xs)]
    for k, xk in enumerate(xs):
        if xk.shape != y_arr.shape:
            raise PanelFormatError(f"regressor {k + 1} has shape {xk.shape}, expected {y_arr.shape}")
    order = y_arr.ndim
    dim_names = tuple(dim_names) if dim_names is not None else tuple(f"dim{n}" for n in range(1, order + 1))
    x_names = tuple(x_names) if x_names is not None else tuple(f"x{k}" for k in range(1, len(xs) + 1))
    if dim_labels is None:
        dim_labels = [[str(i + 1) for i in range(s)] for s in y_arr.shape]
    if len(dim_names) != order or len(dim_labels) != order or len(x_names) != len(xs):
        raise PanelFormatError("metadata lengths do not match the tensor order / regressor count")

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(dim_names) + [y_name] + list(x_names))
        for rev_key in itertools.product(*(range(s) for s in reversed(y_arr.shape))):
            key = rev_key[::-1]
            row = [dim_labels[d][i] for d, i in enumerate(key)]
            row.append(repr(float(y_arr[key])))
            row.extend(repr(float(xk[key])) for xk in xs)
            writer.writerow(row)
