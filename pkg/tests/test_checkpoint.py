import json
import zipfile

import numpy as np
import pytest

from sefc.checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from sefc.config import tiny_config
from sefc.model import SeLLM
from sefc.numerics import make_rng


def _perturbed(seed=4):
    model = SeLLM(tiny_config(), seed=seed)
    rng = make_rng(1)
    for _, p in model.named_parameters():
        p.data += rng.normal(0, 0.1, size=p.shape)
    model.trained = True
    return model


def test_round_trip_is_bit_exact(tmp_path):
    model = _perturbed()
    path = save_checkpoint(tmp_path / "m.selm", model, extra={"note": "x"})
    loaded, manifest = load_checkpoint(path)
    assert manifest["seed"] == 4 and manifest["extra"] == {"note": "x"} and loaded.trained
    a, b = model.state_dict(), loaded.state_dict()
    assert a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)
    x = make_rng(2).normal(size=(3, 32))
    assert np.array_equal(model(x).data, loaded(x).data)


def test_manifest_contents(tmp_path):
    path = save_checkpoint(tmp_path / "m.selm", _perturbed())
    man = read_manifest(path)
    assert man["format"] == "sefc-checkpoint" and man["dtype"] == "float64"
    assert man["shapes"]["decoder.fc2.bias"] == [8]
    with zipfile.ZipFile(path) as zf:
        assert all(f"params/{k}.selm" in zf.namelist() for k in man["shapes"])


def test_float32_round_trip(tmp_path):
    model = _perturbed().astype(np.float32)
    loaded, _ = load_checkpoint(save_checkpoint(tmp_path / "m.selm", model))
    assert loaded.dtype == np.float32
    assert all(np.array_equal(v, loaded.state_dict()[k]) for k, v in model.state_dict().items())


def test_bad_files(tmp_path):
    with pytest.raises(CheckpointError):
        read_manifest(tmp_path / "none.selm")
    junk = tmp_path / "junk.selm"
    junk.write_bytes(b"not a zip")
    with pytest.raises(CheckpointError):
        read_manifest(junk)
    other = tmp_path / "other.selm"
    with zipfile.ZipFile(other, "w") as zf:
        zf.writestr("manifest.json", json.dumps({"format": "other", "version": 1}))
    with pytest.raises(CheckpointError, match="unsupported"):
        read_manifest(other)
    path = save_checkpoint(tmp_path / "m.selm", _perturbed())
    broken = tmp_path / "broken.selm"
    with zipfile.ZipFile(path) as src, zipfile.ZipFile(broken, "w") as dst:
        for item in src.namelist():
            if item != "params/decoder.fc2.bias.selm":
                dst.writestr(item, src.read(item))
    with pytest.raises(CheckpointError, match="decoder.fc2.bias"):
        load_checkpoint(broken)
