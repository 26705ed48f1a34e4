import json

import numpy as np
import pytest

from pgf_disentangle.io import (
    ConfigError,
    dumps,
    fmt,
    load_model,
    model_digest,
    model_from_dict,
    model_to_dict,
    read_samples,
    write_samples,
)
from pgf_disentangle.samplers import RngState, sample_batch

WORKED = {
    "space": {"labels": ["a", "b"]},
    "process": {"variant": "superposition", "components": [
        {"variant": "poisson", "nu": [1.0, 2.0]},
        {"variant": "determinantal", "K": [[[0.5, 0], [0.25, 0]], [[0.25, 0], [0.5, 0]]]},
    ]},
}


def test_fmt_seventeen_digits():
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(2.0) == "2"
    assert fmt(float("nan")) == "nan"


def test_model_roundtrip():
    space, model = model_from_dict(WORKED)
    again = model_from_dict(json.loads(json.dumps(model_to_dict(model))))[1]
    assert model_digest(model) == model_digest(again)


@pytest.mark.parametrize("bad, where", [
    ({"space": {"labels": ["a"]}}, "process"),
    ({"space": {"labels": ["a"]}, "process": {"variant": "cox"}}, "process.variant"),
    ({"space": {"labels": ["a"]}, "process": {"variant": "poisson", "nu": [1, 2]}}, "process.nu"),
    ({"space": {"labels": ["a"]}, "process": {"variant": "poisson", "nu": ["x"]}}, "process.nu"),
    ({"space": {"labels": ["a"]}, "process": {"variant": "determinantal", "K": [[[1, 2, 3]]]}}, "process.K[0][0]"),
    ({"space": {"labels": ["a", "a"]}, "process": {"variant": "poisson", "nu": [1, 1]}}, "space"),
    ({"space": {"labels": ["a"]}, "process": {"variant": "superposition", "components": [
        {"variant": "poisson", "nu": [-1]}]}}, "process.components[0]"),
])
def test_config_errors_name_the_field(bad, where):
    with pytest.raises(ConfigError) as e:
        model_from_dict(bad)
    assert e.value.where == where


def test_invalid_json_reports_position(tmp_path):
    p = tmp_path / "m.json"
    p.write_text('{"space": {\n  "labels": [1,]\n}}')
    with pytest.raises(ConfigError, match="line 2"):
        load_model(p)


def test_samples_csv_roundtrip(tmp_path, worked):
    _, _, model = worked
    batch = sample_batch(model, 50, RngState(3))
    write_samples(tmp_path / "s.csv", batch)
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "a,b"
    back = read_samples(tmp_path / "s.csv", model.space)
    assert np.array_equal(back.counts, batch.counts)


def test_samples_header_mismatch(tmp_path, worked):
    (tmp_path / "s.csv").write_text("x,y\n1,0\n")
    with pytest.raises(ConfigError):
        read_samples(tmp_path / "s.csv", worked[2].space)


def test_dumps_is_stable():
    obj = {"x": [0.1, 1 + 2j], "y": {"z": np.array([1.5])}}
    assert dumps(obj) == dumps(obj)
    assert "0.10000000000000001" in dumps(obj)
