import numpy as np
import pandas as pd
import pytest

from mimo_pipeline.errors import ConfigurationError, FramingError
from mimo_pipeline.ldpc import LdpcCode
from utils.file_handler import (
    BER_COLUMNS,
    append_rows_csv,
    get_next_sequential_number,
    read_alist,
    read_plot_columns,
    read_rows_csv,
    write_alist,
    write_plot_columns,
)


def test_sequential_numbers(tmp_path):
    assert get_next_sequential_number(tmp_path, None) == 1
    assert get_next_sequential_number(tmp_path, "exp") == 1
    (tmp_path / "exp_1").mkdir()
    (tmp_path / "exp_4.csv").write_text("")
    (tmp_path / "exp_draft").mkdir()
    (tmp_path / "other_9").mkdir()
    assert get_next_sequential_number(tmp_path, "exp") == 5


def test_append_writes_header_once(tmp_path):
    path = tmp_path / "sub" / "ber.csv"
    row = dict(variant="nubep", snr_db=10.0, bit_errors=3, bits_total=100, frame_errors=1, frames_total=2, wall_time_s=0.0)
    append_rows_csv(path, [row], BER_COLUMNS)
    append_rows_csv(path, [], BER_COLUMNS)
    append_rows_csv(path, [{**row, "snr_db": 12.0}], BER_COLUMNS)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(BER_COLUMNS)
    assert len(lines) == 3
    assert read_rows_csv(path)["snr_db"].tolist() == [10.0, 12.0]
    with pytest.raises(FileNotFoundError):
        read_rows_csv(tmp_path / "nope.csv")


def test_plot_columns(tmp_path):
    frame = pd.DataFrame({"snr_db": [0.0, 2.5], "ber": [0.1, 1.25e-5], "extra": [1, 2]})
    path = write_plot_columns(tmp_path / "nubep.dat", frame, ["snr_db", "ber"])
    assert path.read_text().splitlines() == ["# snr_db ber", "0.0 0.1", "2.5 1.25e-05"]
    back = read_plot_columns(path, ["snr_db", "ber"])
    assert back["ber"].tolist() == [0.1, 1.25e-5]


def test_alist_layout(tmp_path):
    H = np.array([[1, 1, 0, 1], [0, 1, 1, 0]], dtype=np.uint8)
    path = write_alist(H, tmp_path / "toy.alist")
    assert path.read_text().splitlines() == [
        "4 2",
        "2 3",
        "1 2 1 1",
        "3 2",
        "1 0",
        "1 2",
        "2 0",
        "1 0",
        "1 2 4",
        "2 3 0",
    ]
    assert np.array_equal(read_alist(path).toarray(), H)


def test_alist_preserves_code(tmp_path, small_code):
    path = write_alist(small_code.parity_matrix, tmp_path / "small.alist")
    code = LdpcCode.from_parity_matrix(read_alist(path))
    assert code.n == small_code.n and code.k == small_code.k
    assert np.array_equal(code.column_degrees(), small_code.column_degrees())


def test_alist_errors(tmp_path):
    with pytest.raises(ConfigurationError):
        read_alist(tmp_path / "missing.alist")
    bad = tmp_path / "bad.alist"
    bad.write_text("2 1\n1 2\n1 x\n", encoding="utf-8")
    with pytest.raises(FramingError):
        read_alist(bad)
    inconsistent = tmp_path / "inconsistent.alist"
    inconsistent.write_text("2 1\n1 2\n1 1\n2\n1\n0\n1 2\n", encoding="utf-8")
    with pytest.raises(FramingError):
        read_alist(inconsistent)
