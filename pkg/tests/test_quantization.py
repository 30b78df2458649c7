"""Tests for int8 post-training quantization and the checkpoint format"""

import numpy as np
import pytest

from kwskit.checkpoint import (
    describe_checkpoint,
    load_checkpoint,
    load_quantized,
    save_checkpoint,
    save_quantized,
)
from kwskit.errors import CheckpointFormatError, NonFinite
from kwskit.kws_config import MODEL_PRESETS
from kwskit.kws_model import ModelConfig, init_params, model_size_report
from kwskit.quantization import dequantize, max_roundtrip_error, quantize_int8, quantize_tensor


class TestQuantizeTensor:
    def test_symmetric_endpoints(self):
        q = quantize_tensor(np.array([-1.0, 0.0, 1.0]))
        assert q.scale == pytest.approx(1 / 127)
        np.testing.assert_array_equal(q.values, [-127, 0, 127])
        assert q.values.dtype == np.int8

    def test_all_zero_tensor(self):
        q = quantize_tensor(np.zeros((3, 4)))
        assert q.scale == 1.0
        np.testing.assert_array_equal(q.values, 0)

    def test_round_half_to_even(self):
        q = quantize_tensor(np.array([127.0, 2.5, -3.5, 0.5]))
        assert q.scale == 1.0
        np.testing.assert_array_equal(q.values, [127, 2, -4, 0])

    def test_non_finite(self):
        with pytest.raises(NonFinite):
            quantize_tensor(np.array([1.0, np.nan]))

    def test_roundtrip_error_bound(self, rng):
        for _ in range(200):
            shape = tuple(rng.integers(1, 30, size=2))
            weights = rng.normal(scale=rng.uniform(1e-3, 10.0), size=shape)
            q = quantize_tensor(weights)
            assert np.abs(weights - q.dequantize()).max() <= q.scale / 2 + 1e-12


class TestQuantizeModel:
    def test_model_roundtrip_bound(self, tiny_model_config):
        params = init_params(tiny_model_config, seed=0)
        for name, (error, scale) in max_roundtrip_error(params).items():
            assert error <= scale / 2 + 1e-9, name

    def test_loss_head_stays_float(self, tiny_model_config):
        params = init_params(tiny_model_config, seed=0, w_init=7.25, b_init=-2.5)
        model = quantize_int8(params)
        assert "w_scale" not in model.tensors
        restored = dequantize(model)
        assert restored.w_scale.item() == 7.25
        assert restored.b_shift.item() == -2.5

    def test_payload_matches_size_report(self, tiny_model_config):
        model = quantize_int8(init_params(tiny_model_config, seed=0))
        assert model.payload_bytes() == model_size_report(tiny_model_config)["int8_bytes"]


class TestCheckpoint:
    def test_float_checkpoint(self, tmp_path, tiny_model_config):
        params = init_params(tiny_model_config, seed=4)
        path = str(tmp_path / "model.s4kc")
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert loaded.config == tiny_model_config
        for name, data in params.named_tensors().items():
            np.testing.assert_array_equal(loaded.named_tensors()[name], data)

    def test_int8_checkpoint_dequantizes(self, tmp_path, tiny_model_config):
        params = init_params(tiny_model_config, seed=4)
        model = quantize_int8(params)
        path = str(tmp_path / "model.int8.s4kc")
        save_quantized(model, path)
        loaded = load_checkpoint(path, dtype=np.float64)
        for name, q in model.tensors.items():
            np.testing.assert_allclose(loaded.named_tensors()[name], q.dequantize(), rtol=1e-6)
        reloaded = load_quantized(path)
        for name, q in model.tensors.items():
            np.testing.assert_array_equal(reloaded.tensors[name].values, q.values)

    def test_int8_is_under_thirty_percent(self, tmp_path):
        config = ModelConfig(**MODEL_PRESETS["toy"])
        params = init_params(config, seed=0)
        float_size = save_checkpoint(params, str(tmp_path / "f.s4kc"))
        int8_size = save_quantized(quantize_int8(params), str(tmp_path / "q.s4kc"))
        assert int8_size <= 0.30 * float_size

    def test_magic_and_description(self, tmp_path, tiny_model_config):
        path = str(tmp_path / "model.s4kc")
        size = save_checkpoint(init_params(tiny_model_config, seed=0), path)
        with open(path, "rb") as f:
            assert f.read(4) == b"S4KC"
        info = describe_checkpoint(path)
        assert info["kind"] == "float32"
        assert info["bytes"] == size
        assert info["tensors"] == 3 * tiny_model_config.num_layers + 4

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.s4kc"
        path.write_bytes(b"XXXX" + bytes(40))
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(str(path))

    def test_truncated(self, tmp_path, tiny_model_config):
        path = tmp_path / "model.s4kc"
        save_checkpoint(init_params(tiny_model_config, seed=0), str(path))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(str(path))

    def test_trailing_bytes(self, tmp_path, tiny_model_config):
        path = tmp_path / "model.s4kc"
        save_checkpoint(init_params(tiny_model_config, seed=0), str(path))
        path.write_bytes(path.read_bytes() + b"\x00")
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(str(path))

    def test_float_checkpoint_is_not_int8(self, tmp_path, tiny_model_config):
        path = str(tmp_path / "model.s4kc")
        save_checkpoint(init_params(tiny_model_config, seed=0), path)
        with pytest.raises(CheckpointFormatError):
            load_quantized(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(str(tmp_path / "absent.s4kc"))
