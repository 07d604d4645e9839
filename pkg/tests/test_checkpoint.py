"""Tests for the binary checkpoint container."""
import json
import struct

import numpy as np
import pytest

from adareg.config.run_config import RunConfig
from adareg.model.checkpoint import (
    MAGIC,
    decode_checkpoint,
    encode_checkpoint,
    load_checkpoint,
    restore_model,
    save_checkpoint,
)
from adareg.model.topology import ReIDModel, model_forward
from adareg.utils.exceptions import CheckpointError


@pytest.fixture
def trained_like_model():
    config = RunConfig()
    model = ReIDModel.build(config.model, config.reg, 4, np.random.default_rng(5))
    rng = np.random.default_rng(6)
    for factor in model.factors:
        factor.theta.data = np.array(rng.uniform(-3.0, 3.0))
    model_forward(model, rng.uniform(size=(4, 1, 32, 16)), mode='train')
    return config, model


def test_encoding_is_deterministic(trained_like_model):
    config, model = trained_like_model
    assert encode_checkpoint(model, config, 7) == encode_checkpoint(model, config, 7)


def test_round_trip_is_byte_exact(tmp_path, trained_like_model):
    config, model = trained_like_model
    path = save_checkpoint(str(tmp_path / 'checkpoint.bin'), model, config, 42)
    checkpoint = load_checkpoint(path)
    assert checkpoint.iteration == 42
    assert checkpoint.num_classes == 4
    assert checkpoint.config == config

    restored = restore_model(checkpoint)
    with open(path, 'rb') as file:
        assert encode_checkpoint(restored, checkpoint.config, checkpoint.iteration) == file.read()
    for name, tensor in model.registry.items():
        np.testing.assert_array_equal(restored.registry[name].data, tensor.data)
    for prefix, bn in model.batchnorms().items():
        np.testing.assert_array_equal(restored.batchnorms()[prefix].running_var, bn.running_var)


def test_factor_entries_carry_category_and_owner(trained_like_model):
    config, model = trained_like_model
    checkpoint = decode_checkpoint(encode_checkpoint(model, config, 0))
    factors = [e for e in checkpoint.entries if e['kind'] == 'factor']
    assert len(factors) == len(model.factors)
    assert factors[0]['param'] == model.factors[0].param_id
    assert factors[0]['category'] == model.factors[0].category
    kinds = {e['kind'] for e in checkpoint.entries}
    assert kinds == {'parameter', 'factor', 'running_mean', 'running_var'}


def test_missing_array_is_named(trained_like_model):
    config, model = trained_like_model
    checkpoint = decode_checkpoint(encode_checkpoint(model, config, 0))
    del checkpoint.arrays['global.head.classifier.kernel']
    del checkpoint.arrays['global.head.bn.running_mean']
    with pytest.raises(CheckpointError, match='global.head.classifier.kernel.*global.head.bn.running_mean'):
        restore_model(checkpoint)


def test_missing_header_field():
    header = json.dumps({'config': {}, 'entries': [], 'num_classes': 3}).encode()
    blob = MAGIC + struct.pack('<IQ', 1, len(header)) + header
    with pytest.raises(CheckpointError, match="'iteration'"):
        decode_checkpoint(blob)


def test_corrupt_blobs_rejected(trained_like_model):
    config, model = trained_like_model
    blob = encode_checkpoint(model, config, 0)
    with pytest.raises(CheckpointError, match='not a checkpoint'):
        decode_checkpoint(b'NOTACKPT' + blob[8:])
    with pytest.raises(CheckpointError, match='payload'):
        decode_checkpoint(blob[:-8])
    with pytest.raises(CheckpointError, match='version'):
        decode_checkpoint(MAGIC + struct.pack('<IQ', 99, 0))


def test_missing_file(tmp_path):
    with pytest.raises(CheckpointError):
        load_checkpoint(str(tmp_path / 'absent.bin'))


def test_scalar_entries_keep_rank_zero(trained_like_model):
    config, model = trained_like_model
    checkpoint = decode_checkpoint(encode_checkpoint(model, config, 0))
    factors = [e for e in checkpoint.entries if e['kind'] == 'factor']
    assert factors and all(e['shape'] == [] and e['count'] == 1 for e in factors)
    restored = restore_model(checkpoint)
    assert restored.factors[0].theta.shape == ()
    assert restored.factors[0].theta.item() == model.factors[0].theta.item()
