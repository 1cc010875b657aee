import json
from pathlib import Path

import pytest

from nonlocal_fk.config import ConfigError, load_config, path_config_from, problem_from_config, validate_config

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

BASE = {
    "problem": {"dim": 2, "domain": {"type": "ball", "center": [0, 0], "radius": 1}, "f": "1"},
    "numerics": {"dt": 1e-3, "n_paths": 100, "points": [[0, 0]]},
}


def with_(path, value):
    cfg = json.loads(json.dumps(BASE))
    node = cfg
    keys = path.split(".")
    for k in keys[:-1]:
        node = node.setdefault(k, {})
    node[keys[-1]] = value
    return cfg


@pytest.mark.parametrize("name", sorted(p.name for p in CONFIGS.glob("*.json")))
def test_shipped_configs_are_valid(name):
    cfg = load_config(CONFIGS / name)
    spec = problem_from_config(cfg["problem"])
    assert spec.dim == cfg["problem"]["dim"]


@pytest.mark.parametrize("path, value, needle", [
    ("bogus", 1, "unknown key bogus"),
    ("problem.bogus", 1, "unknown key problem.bogus"),
    ("problem.domain.bogus", 1, "problem.domain"),
    ("numerics.extra", 1, "unknown key numerics.extra"),
    ("diagnose.kato", {"radii": [0.1], "foo": 1}, "unknown key diagnose.kato.foo"),
    ("problem.alpha", 2.0, "problem.alpha"),
    ("problem.sigma", 2, "problem.sigma"),
    ("numerics.dt", -1, "numerics.dt"),
    ("seed", -3, "seed"),
    ("seed", 2 ** 64, "seed"),
])
def test_schema_errors_name_the_key(path, value, needle):
    with pytest.raises(ConfigError) as exc:
        validate_config(with_(path, value))
    assert needle in str(exc.value)


def test_semantic_errors():
    cfg = with_("problem.domain", {"type": "box", "lo": [0, 0, 0], "hi": [1, 1, 1]})
    with pytest.raises(ConfigError, match="dimension"):
        problem_from_config(cfg["problem"])
    cfg = with_("problem.f", "x1 +")
    with pytest.raises(ConfigError, match="problem"):
        problem_from_config(cfg["problem"])
    with pytest.raises(ConfigError, match="numerics"):
        path_config_from({"dt": 5.0, "t_max": 1.0})


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "missing.json")
    p = tmp_path / "bad.json"
    p.write_text("{\"a\": ")
    with pytest.raises(ConfigError, match="invalid JSON"):
        load_config(p)
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError, match="object"):
        load_config(p)
