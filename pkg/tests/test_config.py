import pytest

from starguide.config import load_config, parse_config
from starguide.errors import ConfigError

BASE = {"geometry": {"kind": "StraightStrip"}, "scan": {"L": [4, 5, 6, 8], "h": 0.0625}}


def with_(**blocks):
    d = {k: dict(v) for k, v in BASE.items()}
    for k, v in blocks.items():
        d[k] = {**d.get(k, {}), **v} if isinstance(v, dict) else v
    return d


def test_defaults():
    cfg = parse_config(BASE)
    assert cfg.scan.n_eigs == 3 and cfg.scan.tol == 1e-10
    assert cfg.experiments.run == () and cfg.workers == 1
    assert cfg.spec.junction.kind == "StraightStrip"


@pytest.mark.parametrize("bad", [
    {"bogus": 1},
    {"geometry": {"bogus": 1}},
    {"scan": {"bogus": 1}},
    {"experiments": {"bogus": 1}},
    {"experiments": {"packet": {"bogus": 1}}},
    {"experiments": {"run": ["teleport"]}},
    {"experiments": {"z": [[1.0, 0.0]]}},
    {"scan": {"L": [4, 5]}},
    {"scan": {"L": [4, 6, 5, 8]}},
    {"scan": {"h": -1}},
    {"scan": {"n_eigs": 1}},
    {"geometry": {"kind": "Triangle"}},
    {"workers": 0},
])
def test_rejects(bad):
    with pytest.raises(ConfigError):
        parse_config(with_(**bad))


def test_missing_block():
    with pytest.raises(ConfigError):
        parse_config({"geometry": {"kind": "StraightStrip"}})


def test_hash_ignores_output_and_workers():
    a = parse_config(with_(output="x", workers=1))
    b = parse_config(with_(output="y", workers=4))
    assert a.block_hash() == b.block_hash()
    c = parse_config(with_(scan={"h": 0.03125}))
    assert a.block_hash() != c.block_hash()
    assert a.block_hash("geometry") == c.block_hash("geometry")


def test_load_toml(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[geometry]\nkind = "LBend"\n[scan]\nL = [4, 5, 6, 8]\nh = 0.0625\n')
    assert load_config(p).geometry["kind"] == "LBend"
    p.write_text("[geometry\n")
    with pytest.raises(ConfigError):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.toml")


def test_mask_resolution_checked_early():
    g = {"kind": "CustomMask", "bitmap": [[True] * 4] * 4, "pixels_per_width": 4,
         "faces": [["left", 0], ["right", 0]], "branch_angles": [3.141592653589793, 0.0]}
    parse_config(with_(geometry=g, scan={"h": 0.125}))
    with pytest.raises(ConfigError):
        parse_config(with_(geometry=g, scan={"h": 0.1}))
    with pytest.raises(ConfigError):
        parse_config(with_(geometry=g, scan={"h": 0.125}, experiments={"run": ["scattering"], "n_width": 6}))
