import numpy as np
import pytest

from manifold_mls import io
from manifold_mls.errors import InconsistentWidth, IoError, ParseError


def test_csv_two_by_two(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("1.0,2.0\n3.0,4.0")
    cl = io.load_cloud(f)
    assert cl.points.tolist() == [[1.0, 2.0], [3.0, 4.0]]


def test_ragged_rows_report_line(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("1,2\n3,4\n5,6,7\n")
    with pytest.raises(InconsistentWidth) as ei:
        io.load_cloud(f)
    assert ei.value.line == 3


def test_bad_number_reports_line(tmp_path):
    f = tmp_path / "c.csv"
    f.write_text("1,2\n\n3,x\n")
    with pytest.raises(ParseError) as ei:
        io.load_cloud(f)
    assert ei.value.line == 3


def test_missing_file():
    with pytest.raises(IoError):
        io.load_cloud("/nonexistent/cloud.csv")


def test_raw_roundtrip_bit_identical(tmp_path):
    P = np.random.default_rng(0).standard_normal((123, 4)) * 1e3
    f = tmp_path / "c.f64"
    io.save_cloud(f, P)
    data = f.read_bytes()
    assert data[:16] == np.array([123, 4], dtype="<u8").tobytes()
    assert len(data) == 16 + 8 * 123 * 4
    assert np.array_equal(io.load_cloud(f).points, P)


def test_csv_roundtrip_exact(tmp_path):
    P = np.random.default_rng(1).standard_normal((50, 3))
    f = tmp_path / "c.csv"
    io.save_cloud(f, P)
    assert np.array_equal(io.load_cloud(f).points, P)


def test_truncated_raw(tmp_path):
    f = tmp_path / "c.f64"
    f.write_bytes(np.array([3, 2], dtype="<u8").tobytes() + b"\0" * 8)
    with pytest.raises(ParseError):
        io.load_cloud(f)


def test_read_config(tmp_path):
    f = tmp_path / "a.cfg"
    f.write_text("# experiment\nmanifold = circle\n\nsigma=0.5  # noise\n")
    assert io.read_config(f) == {"manifold": "circle", "sigma": "0.5"}
    f.write_text("no equals sign\n")
    with pytest.raises(ParseError):
        io.read_config(f)


def test_parse_vector():
    assert io.parse_vector("1.5,2,-3").tolist() == [1.5, 2.0, -3.0]
    with pytest.raises(ParseError):
        io.parse_vector("1,a")
