import json
import math

import numpy as np
import pandas as pd
import pytest
from hypothesis import given
from hypothesis import strategies as st

from alte._io import atomic_write, dumps, jsonable, output_dir


def test_jsonable_maps_non_finite_to_null():
    obj = {"a": np.float64("nan"), "b": [np.inf, 1.5], "c": np.int64(3), "d": np.bool_(True),
           "e": np.arange(2), "f": pd.DataFrame({"x": [1.0]})}
    assert jsonable(obj) == {"a": None, "b": [None, 1.5], "c": 3, "d": True, "e": [0, 1], "f": [{"x": 1.0}]}
    json.loads(dumps(obj))


@given(st.dictionaries(st.text(max_size=5), st.floats(allow_nan=True, allow_infinity=True), max_size=5))
def test_dumps_is_stable_and_strict(d):
    text = dumps(d)
    assert text == dumps(dict(reversed(list(d.items()))))
    back = json.loads(text)
    for k, v in d.items():
        assert back[k] == (v if math.isfinite(v) else None)


def test_atomic_write(tmp_path):
    p = atomic_write(tmp_path / "a" / "b.txt", "one\n")
    assert p.read_text() == "one\n"
    atomic_write(p, "two\n")
    assert p.read_text() == "two\n"
    assert [f.name for f in p.parent.iterdir()] == ["b.txt"]


def test_atomic_write_failure_leaves_target(tmp_path):
    p = atomic_write(tmp_path / "c.txt", "keep\n")
    with pytest.raises(TypeError):
        atomic_write(p, 123)
    assert p.read_text() == "keep\n"
    assert [f.name for f in tmp_path.iterdir()] == ["c.txt"]


def test_output_dir(monkeypatch, tmp_path):
    monkeypatch.delenv("ALTE_OUTPUT_DIR", raising=False)
    assert output_dir(None) is None
    monkeypatch.setenv("ALTE_OUTPUT_DIR", str(tmp_path))
    assert output_dir(None) == tmp_path
    assert output_dir("x") == type(tmp_path)("x")
