import json
import math

import numpy as np

from halflab import io


def test_floats_use_17_significant_digits():
    text = io.dumps({"x": 0.1, "y": [1.0 / 3.0, 2]})
    doc = json.loads(text)
    assert doc["x"] == 0.1 and doc["y"][0] == 1.0 / 3.0
    assert "0.10000000000000001" in text


def test_nonfinite_values_become_strings():
    doc = json.loads(io.dumps({"a": -math.inf, "b": math.nan, "c": math.inf}))
    assert doc == {"a": "-inf", "b": "nan", "c": "inf"}


def test_numpy_scalars_and_arrays():
    doc = json.loads(io.dumps({"a": np.float64(2.5), "b": np.arange(3), "c": np.bool_(True)}))
    assert doc == {"a": 2.5, "b": [0, 1, 2], "c": True}


def test_dumps_is_deterministic():
    obj = {"z": [1e-300, -0.0, 12345.678], "nested": {"k": (1, "s", None)}}
    assert io.dumps(obj) == io.dumps(obj)


def test_sha256(tmp_path):
    p = io.write_text(tmp_path / "a" / "f.txt", "abc")
    assert io.sha256_file(p) == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
