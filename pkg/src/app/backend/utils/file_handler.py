import os
import logging
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Union

import numpy as np
import pandas as pd
from scipy.sparse import csr_matrix

from mimo_pipeline.errors import ConfigurationError, FramingError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

BER_COLUMNS = ["variant", "snr_db", "bit_errors", "bits_total", "frame_errors", "frames_total", "wall_time_s"]
ITERATION_COLUMNS = ["variant", "snr_db", "turbo_iter", "bit_errors", "bits_total"]


# ================================
# RUN NAMING
# ================================

def get_next_sequential_number(results_dir: PathLike, stem: Optional[str] = None) -> int:
    """
    Get the next free run number for ``{stem}_{N}`` entries in ``results_dir``.
    """
    if not stem:
        return 1

    os.makedirs(results_dir, exist_ok=True)
    pattern = f"{stem}_"

    existing_numbers = []
    for entry in os.listdir(results_dir):
        if entry.startswith(pattern):
            number_part = os.path.splitext(entry)[0].split("_")[-1]
            if number_part.isdigit():
                existing_numbers.append(int(number_part))

    return max(existing_numbers) + 1 if existing_numbers else 1


# ================================
# TABULAR RESULTS
# ================================

def append_rows_csv(path: PathLike, rows: List[Dict], columns: List[str]) -> None:
    """Append rows to a CSV, writing the header only when the file is new."""
    if not rows:
        return
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(rows, columns=columns)
    frame.to_csv(path, mode="a", header=not path.exists(), index=False, lineterminator="\n")


def read_rows_csv(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Results file not found: {path}")
    return pd.read_csv(path, float_precision="round_trip")


def write_plot_columns(path: PathLike, frame: pd.DataFrame, columns: List[str]) -> Path:
    """Whitespace-separated columns behind a ``#`` header line."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write("# " + " ".join(columns) + "\n")
        frame[columns].to_csv(f, sep=" ", header=False, index=False, lineterminator="\n")
    return path


def read_plot_columns(path: PathLike, columns: List[str]) -> pd.DataFrame:
    return pd.read_csv(path, sep=" ", comment="#", header=None, names=columns, float_precision="round_trip")


# ================================
# ALIST PARITY MATRICES
# ================================

def write_alist(H, path: PathLike) -> Path:
    """Write a binary parity matrix in alist format (1-based, zero padded)."""
    H = csr_matrix(H)
    m, n = H.shape
    csc = H.tocsc()
    col_degrees = np.diff(csc.indptr)
    row_degrees = np.diff(H.indptr)

    def padded(indices: Iterable[int], width: int) -> str:
        entries = [i + 1 for i in sorted(indices)]
        return " ".join(map(str, entries + [0] * (width - len(entries))))

    lines = [
        f"{n} {m}",
        f"{col_degrees.max(initial=0)} {row_degrees.max(initial=0)}",
        " ".join(map(str, col_degrees)),
        " ".join(map(str, row_degrees)),
    ]
    lines += [padded(csc.indices[csc.indptr[j]:csc.indptr[j + 1]], col_degrees.max()) for j in range(n)]
    lines += [padded(H.indices[H.indptr[i]:H.indptr[i + 1]], row_degrees.max()) for i in range(m)]

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    logger.info(f"✅ Parity matrix {m}x{n} written to {path}")
    return path


def read_alist(path: PathLike) -> csr_matrix:
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"alist file not found: {path}")
    tokens = path.read_text(encoding="utf-8").split()
    try:
        values = [int(t) for t in tokens]
    except ValueError as e:
        raise FramingError(f"Malformed alist file {path}: {e}") from e

    n, m, max_col, _max_row = values[:4]
    col_degrees = values[4:4 + n]
    cursor = 4 + n + m
    rows, cols = [], []
    for j in range(n):
        entries = values[cursor:cursor + max_col]
        cursor += max_col
        checks = [e - 1 for e in entries if e > 0]
        if len(checks) != col_degrees[j]:
            raise FramingError(f"alist column {j + 1} lists {len(checks)} checks, header says {col_degrees[j]}")
        rows += checks
        cols += [j] * len(checks)

    data = np.ones(len(rows), dtype=np.uint8)
    return csr_matrix((data, (rows, cols)), shape=(m, n))
