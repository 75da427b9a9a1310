"""Round-trip and determinism tests for the JSON/CSV layer."""

import json
import os

import numpy as np
import pytest

from pavelab import algebra as alg
from pavelab import families
from pavelab import serialize as ser
from pavelab.algebra import AlgebraShape


def test_element_roundtrip():
    sh = AlgebraShape((2, 3), (0.125, 0.25))
    x = alg.random_element(sh, alg.SELFADJOINT, 1)
    obj = ser.element_to_obj(x)
    assert obj["format"] == "element/1"
    back = ser.element_from_obj(obj)
    assert back.allclose(x, tol=0.0)


def test_element_format_guard():
    with pytest.raises(ValueError):
        ser.element_from_obj({"format": "element/99"})


def test_inclusion_spec_roundtrip():
    spec = families.tensor_product(2, 3).spec
    obj = ser.inclusion_spec_to_obj(spec)
    assert set(obj) == {"n_blocks", "n_weights", "m_blocks", "m_weights", "lambda"}
    back = ser.inclusion_spec_from_obj(obj)
    assert back == spec


def test_partition_roundtrip_inline():
    sh = AlgebraShape.matrix(6)
    part = alg.coordinate_partition(sh, 3, unitary=alg.random_haar_unitary(sh, 2))
    obj = ser.partition_to_obj(part)
    assert obj["kind"] == "inline"
    back = ser.partition_from_obj(obj)
    back.validate()
    for p, q in zip(part.projections, back.projections):
        assert p.allclose(q, tol=0.0)


def test_partition_frames_roundtrip_exact(tmp_path):
    sh = AlgebraShape.matrix(6)
    part = alg.coordinate_partition(sh, 3, unitary=alg.random_haar_unitary(sh, 9))
    obj = ser.partition_to_obj(part)
    assert "frames" in obj
    back = ser.partition_from_obj(obj)
    for p, q in zip(part.projections, back.projections):
        assert all((a == b).all() for a, b in zip(p.blocks, q.blocks))
        assert all((a == b).all() for a, b in zip(p.meta["frame"], q.meta["frame"]))


def test_partition_sidecar_roundtrip(tmp_path, monkeypatch):
    monkeypatch.setattr(ser, "PARTITION_SIDE_CAR_LIMIT", 10)
    sh = AlgebraShape.matrix(6)
    part = alg.coordinate_partition(sh, 2, unitary=alg.random_haar_unitary(sh, 3))
    stem = os.path.join(tmp_path, "cert")
    obj = ser.partition_to_obj(part, sidecar_stem=stem)
    assert obj["kind"] == "frame-sidecar"
    back = ser.partition_from_obj(obj, base_dir=str(tmp_path))
    for p, q in zip(part.projections, back.projections):
        assert all((a == b).all() for a, b in zip(p.blocks, q.blocks))
    # digest check trips on corruption
    target = os.path.join(tmp_path, obj["files"][0]["path"])
    with open(target, "r+b") as handle:
        handle.seek(200)
        handle.write(b"\xff")
    with pytest.raises(ValueError, match="digest"):
        ser.partition_from_obj(obj, base_dir=str(tmp_path))


def test_canonical_dumps_handles_numpy_and_sorts():
    obj = {"b": np.float64(1.5), "a": np.int64(2),
           "c": np.array([1.0, 2.0]), "d": np.bool_(True)}
    text = ser.canonical_dumps(obj)
    assert text.index('"a"') < text.index('"b"') < text.index('"c"')
    assert json.loads(text) == {"a": 2, "b": 1.5, "c": [1.0, 2.0], "d": True}


def test_atomic_write_and_csv(tmp_path):
    path = os.path.join(tmp_path, "sub", "table.csv")
    ser.write_csv(path, ["a", "b"], [[1, None], [2.5, "x"]])
    with open(path) as handle:
        lines = handle.read().splitlines()
    assert lines == ["a,b", "1,", "2.5,x"]


def test_strip_meta():
    obj = {"x": 1, "meta": {"timestamp": "now"}}
    assert ser.strip_meta(obj) == {"x": 1}
    assert "meta" in obj
