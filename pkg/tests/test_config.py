import numpy as np
import pytest

from pcbdet import config as cfgio
from pcbdet.detector import init_detector, toy_dcac_config
from pcbdet.errors import ConfigError
from pcbdet.nn.params import ParamStore
from pcbdet.nn.serialize import load_weights, save_weights
from pcbdet.runner import RunConfig, dump_run_config, load_run_config, run_config_from_flat


def test_run_config_roundtrip(tmp_path):
    run = run_config_from_flat({"data.source": "synthetic", "train.epochs": 3, "detector.anchors.scales": [1.0, 2.0]})
    path = tmp_path / "run.cfg"
    path.write_text(dump_run_config(run))
    assert load_run_config(path) == run
    assert run.detector.anchors.scales == (1.0, 2.0)


def test_unknown_field_named():
    with pytest.raises(ConfigError, match="train.epoks"):
        run_config_from_flat({"data.source": "synthetic", "train.epoks": 3})


def test_required_source_and_ranges():
    with pytest.raises(ConfigError, match="data.source"):
        run_config_from_flat({})
    with pytest.raises(ConfigError):
        run_config_from_flat({"data.source": "synthetic", "train.batch_size": 0})
    with pytest.raises(ConfigError):
        run_config_from_flat({"data.source": "synthetic", "preset": "nope"})


def test_type_coercion():
    run = run_config_from_flat({"data.source": "synthetic", "train.base_lr": 1})
    assert isinstance(run.train.base_lr, float)
    with pytest.raises(ConfigError):
        run_config_from_flat({"data.source": "synthetic", "detector.anchors.scales": 2})
    with pytest.raises(ConfigError):
        run_config_from_flat({"data.source": "synthetic", "train": 2})


def test_loads_syntax():
    flat = cfgio.loads('# comment\n\na = 1\nb.c = "x"\nd = [1, 2]\n')
    assert flat == {"a": 1, "b.c": "x", "d": [1, 2]}
    with pytest.raises(ConfigError, match=":1"):
        cfgio.loads("no equals sign")
    with pytest.raises(ConfigError):
        cfgio.loads("a = not-json")


def test_preset_flag_selects_detector():
    run = run_config_from_flat({"preset": "toy_baseline", "data.source": "synthetic"})
    assert run.preset == "toy_baseline" and run.detector.backbone_kind == "baseline"
    assert RunConfig().preset == "toy_dcac"


def test_weights_roundtrip(tmp_path):
    params = init_detector(toy_dcac_config(), seed=3)
    params.set_frozen(params.names()[0], True)
    sha = save_weights(params, tmp_path / "w.tsv", tmp_path / "w.bin")
    again = load_weights(tmp_path / "w.tsv", tmp_path / "w.bin", expected=params)
    assert again.names() == params.names()
    for name in params.names():
        assert again[name].data.tobytes() == params[name].data.astype("<f4").tobytes()
        assert again.is_frozen(name) == params.is_frozen(name)
    assert save_weights(again, tmp_path / "x.tsv", tmp_path / "x.bin") == sha


def test_weights_checksum_and_shape_mismatch(tmp_path):
    params = ParamStore()
    params.add("a", np.arange(6, dtype=np.float32).reshape(2, 3))
    save_weights(params, tmp_path / "w.tsv", tmp_path / "w.bin")
    other = ParamStore()
    other.add("a", np.zeros((3, 2), dtype=np.float32))
    with pytest.raises(ConfigError, match="shape"):
        load_weights(tmp_path / "w.tsv", tmp_path / "w.bin", expected=other)
    blob = bytearray((tmp_path / "w.bin").read_bytes())
    blob[0] ^= 1
    (tmp_path / "w.bin").write_bytes(bytes(blob))
    with pytest.raises(ConfigError, match="checksum"):
        load_weights(tmp_path / "w.tsv", tmp_path / "w.bin")


def test_shipped_configs_load():
    from pathlib import Path

    root = Path(__file__).resolve().parent.parent / "configs"
    runs = {p.stem: load_run_config(p) for p in sorted(root.glob("*.cfg"))}
    assert runs["toy_dcac"] == run_config_from_flat({"data.source": "synthetic"})
    assert runs["toy_baseline"].detector.backbone_kind == "baseline"
    assert runs["pcbdet_patches"].train.base_lr == 2e-4
