import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from taililc import io


@settings(max_examples=30, deadline=None)
@given(M=arrays(np.float64, st.tuples(st.integers(1, 20), st.integers(1, 20)),
                elements=st.floats(allow_nan=False, allow_infinity=False, width=64)))
def test_matrix_roundtrip_is_exact(tmp_path_factory, M):
    path = tmp_path_factory.mktemp("m") / "M.bin"
    io.write_matrix(path, M)
    assert io.read_matrix(path).tobytes() == np.ascontiguousarray(M).tobytes()


def test_matrix_header(tmp_path):
    path = tmp_path / "M.bin"
    io.write_matrix(path, np.arange(6.0).reshape(2, 3))
    raw = path.read_bytes()
    assert struct.unpack("<4sIII", raw[:16]) == (b"TLMX", 1, 2, 3)
    assert len(raw) == 16 + 6 * 8
    # row-major payload
    assert np.frombuffer(raw[16:], "<f8")[3] == 3.0


def test_vector_is_stored_as_column(tmp_path):
    io.write_matrix(tmp_path / "v.bin", np.array([1.0, 2.0]))
    assert io.read_matrix(tmp_path / "v.bin").shape == (2, 1)


def test_rejects_3d(tmp_path):
    with pytest.raises(ValueError):
        io.write_matrix(tmp_path / "x.bin", np.zeros((2, 2, 2)))


@pytest.mark.parametrize("mutate", [
    lambda raw: b"XXXX" + raw[4:],
    lambda raw: raw[:-8],
    lambda raw: raw[:10],
    lambda raw: raw + b"\0" * 8,
])
def test_corrupted_matrix_rejected(tmp_path, mutate):
    path = tmp_path / "M.bin"
    io.write_matrix(path, np.eye(3))
    path.write_bytes(mutate(path.read_bytes()))
    with pytest.raises(ValueError):
        io.read_matrix(path)


def test_atomic_write_leaves_no_temp_files(tmp_path):
    target = tmp_path / "sub" / "f.txt"
    io.atomic_write_text(target, "hello")
    io.atomic_write_text(target, "world")
    assert target.read_text() == "world"
    assert [p.name for p in target.parent.iterdir()] == ["f.txt"]


def test_failed_write_keeps_old_file(tmp_path):
    target = tmp_path / "f.json"
    io.write_json(target, {"a": 1})
    with pytest.raises(TypeError):
        io.write_json(target, {"a": object()})
    assert io.read_json(target) == {"a": 1}


def test_sha256_file_known_value(tmp_path):
    p = tmp_path / "abc"
    p.write_bytes(b"abc")
    assert io.sha256_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert io.sha256_file(p, chunk=1) == io.sha256_file(p)


def test_sha256_json_ignores_key_order():
    assert io.sha256_json({"a": 1, "b": [1, 2]}) == io.sha256_json({"b": [1, 2], "a": 1})
    assert io.sha256_json({"a": 1}) != io.sha256_json({"a": 2})


def test_columns_csv(tmp_path):
    io.write_columns_csv(tmp_path / "c.csv", {"t": np.array([0.0, 0.1]), "id": np.array([3, 4])})
    assert (tmp_path / "c.csv").read_text().splitlines() == ["t,id", "0.0,3", "0.1,4"]


def test_matrix_csv_roundtrips_floats(tmp_path):
    M = np.array([[0.1, 1 / 3], [1e-300, -2.5]])
    io.write_matrix_csv(tmp_path / "m.csv", M)
    back = np.loadtxt(tmp_path / "m.csv", delimiter=",")
    assert back.tobytes() == M.tobytes()
