import json
import struct

import numpy as np
import pytest

from fusionfer.checkpoint import CheckpointError, dumps, load_checkpoint, loads, save_checkpoint
from fusionfer.fusion import STRATEGIES, FusionConfig, FusionModel


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_round_trip_bit_exact(tmp_path, strategy):
    model = FusionModel.init(FusionConfig(6, 3, strategy, hidden=10), seed=4)
    path = tmp_path / "m.ckpt"
    save_checkpoint(model, path)
    back = load_checkpoint(path)
    assert back.config == model.config
    assert list(back.params) == list(model.params)
    for name in model.params:
        assert back.params[name].tobytes() == model.params[name].tobytes()
    assert dumps(back) == path.read_bytes()


def test_config_block_records_layers():
    data = dumps(FusionModel.init(FusionConfig(4, 2, "UpDownConcat"), seed=0))
    assert data[:4] == b"FFCK"
    (clen,) = struct.unpack_from("<I", data, 8)
    meta = json.loads(data[12 : 12 + clen])
    assert meta["keygen_layers"] == 3 and meta["strategy"] == "UpDownConcat"


def _tamper_config(data, **changes):
    (clen,) = struct.unpack_from("<I", data, 8)
    meta = json.loads(data[12 : 12 + clen])
    meta.update(changes)
    blob = json.dumps(meta, sort_keys=True, separators=(",", ":")).encode()
    return data[:8] + struct.pack("<I", len(blob)) + blob + data[12 + clen :]


def test_layer_count_enforced_on_load():
    data = dumps(FusionModel.init(FusionConfig(4, 2, "UpDownMean"), seed=0))
    with pytest.raises(CheckpointError, match="key-generator layers"):
        loads(_tamper_config(data, keygen_layers=1))
    with pytest.raises(CheckpointError):
        loads(_tamper_config(data, strategy="Mean", keygen_layers=1))


@pytest.mark.parametrize("cut", [3, 20, -1])
def test_corrupt(cut):
    data = dumps(FusionModel.init(FusionConfig(4, 2), seed=0))
    with pytest.raises(CheckpointError):
        loads(data[:cut])
    with pytest.raises(CheckpointError):
        loads(data + b"\0")


def test_values_survive_extremes():
    model = FusionModel.init(FusionConfig(2, 1, "Mean"), seed=0)
    model.params["local.kernel"][:] = [np.finfo(float).tiny, -0.0, 1e308]
    back = loads(dumps(model))
    assert back.params["local.kernel"].tobytes() == model.params["local.kernel"].tobytes()
