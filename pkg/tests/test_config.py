import json

import numpy as np
import pytest

from dropletmm.config import ConfigError, load_config, parse_config

BASE = {
    "domain": {"kind": "interval", "length": 2.0, "h": 0.0625},
    "params": {"mu_minus": 0.36, "mu_plus": 0.21},
    "amplitude": 1.0,
}


def _cfg(**over):
    raw = json.loads(json.dumps(BASE))
    for key, value in over.items():
        if value is None:
            raw.pop(key, None)
        else:
            raw[key] = value
    return json.dumps(raw)


def test_minimal_config():
    cfg = parse_config(_cfg())
    assert cfg.amplitude == 1.0 and cfg.selection == "max"
    d = cfg.build_domain()
    assert np.array_equal(cfg.initial_mask(d), d.dirichlet)


def test_initial_distance():
    cfg = parse_config(_cfg(initial={"distance": 0.25}))
    d = cfg.build_domain()
    assert int(cfg.initial_mask(d).sum()) == 5


def test_schedule_gets_default_partition():
    cfg = parse_config(_cfg(schedule={"times": [0, 2, 5], "amplitudes": [1, 1.2, 0.9]}))
    assert cfg.partition.delta == 2.0
    assert cfg.schedule.monotonicity_changes() == [1]


@pytest.mark.parametrize("over,path", [
    ({"params": {"mu_minus": 1.2, "mu_plus": 0.2}}, "params.mu_minus: assumption"),
    ({"params": {"mu_minus": 0.3, "mu_plus": -1}}, "params.mu_plus"),
    ({"params": {"mu_minus": 0.3}}, "params.mu_plus: required"),
    ({"domain": {"kind": "sphere"}}, "domain.kind"),
    ({"domain": {"kind": "interval", "length": 2.0, "h": 0.3}}, "domain:"),
    ({"domain": {"kind": "interval", "length": 2.0, "h": 0.25, "guard_band": 1}}, "domain.guard_band"),
    ({"amplitude": 1e-9}, "amplitude: assumption(iii)"),
    ({"amplitude": "big"}, "$.amplitude"),
    ({"schedule": {"times": [0, 1, 2], "amplitudes": [1, 1, 2]}}, "strict monotonicity"),
    ({"schedule": {"times": [0, 1], "amplitudes": [1]}}, "schedule.amplitudes"),
    ({"schedule": {"times": [0, 1], "amplitudes": [1, 1e-9]}}, "assumption(iii)"),
    ({"schedule": {"times": [1, 0], "amplitudes": [1, 2]}}, "schedule:"),
    ({"partition": {"delta": 1}}, "partition: requires a schedule"),
    ({"selection": "median"}, "selection"),
    ({"branch_policy": "all"}, "branch_policy"),
    ({"seed": -3}, "seed"),
    ({"eps0": 0}, "eps0"),
    ({"colour": "blue"}, "colour: unknown field"),
    ({"tolerances": {"tol_E": -1}}, "tolerances.tol_E"),
])
def test_errors_name_the_field(over, path):
    with pytest.raises(ConfigError) as err:
        parse_config(_cfg(**over))
    assert path in str(err.value)


def test_malformed_json():
    with pytest.raises(ConfigError, match=r"^\$: malformed JSON"):
        parse_config("{not json")
    with pytest.raises(ConfigError):
        parse_config("[1, 2]")


def test_disk_config():
    cfg = parse_config(_cfg(domain={"kind": "disks", "centers": [[0, 0]], "r0": 1.0,
                                    "box": [[-3, 3], [-3, 3]], "h": 0.25}))
    assert cfg.build_domain().dim == 2
    with pytest.raises(ConfigError, match="domain.centers"):
        parse_config(_cfg(domain={"kind": "disks", "centers": [], "r0": 1.0, "box": [[-3, 3], [-3, 3]], "h": 0.25}))


def test_canonical_json_roundtrip():
    text = _cfg(schedule={"times": [0, 2], "amplitudes": [1, 1.5]}, partition={"delta": 0.5, "refinement": 3})
    cfg = parse_config(text)
    again = parse_config(cfg.to_json())
    assert again.to_json() == cfg.to_json()
    assert again.partition.refinement == 3


def test_load_config_missing(tmp_path):
    with pytest.raises(OSError, match="cannot read config file"):
        load_config(str(tmp_path / "nope.json"))
    p = tmp_path / "c.json"
    p.write_text(_cfg())
    assert load_config(str(p)).amplitude == 1.0
