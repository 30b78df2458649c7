"""
Post-training symmetric int8 quantization, one scale per tensor
"""

import logging
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from kwskit.errors import NonFinite
from kwskit.kws_model import ModelConfig, ModelParams

logger = logging.getLogger(__name__)

INT8_MAX = 127


@dataclass
class QuantizedTensor:
    values: np.ndarray  # int8, original shape
    scale: float

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.values.shape

    def dequantize(self) -> np.ndarray:
        return self.scale * self.values.astype(np.float64)


@dataclass
class QuantizedModel:
    config: ModelConfig
    tensors: "OrderedDict[str, QuantizedTensor]"
    # loss-head scalars are kept in float; they play no part in inference
    head: Dict[str, float]

    def payload_bytes(self) -> int:
        """int8 data plus one float32 scale per tensor"""
        return int(sum(q.values.size + 4 for q in self.tensors.values()))


def quantize_tensor(weights: np.ndarray) -> QuantizedTensor:
    """
    scale = max|w| / 127, q = round-half-even(w / scale)

    An all-zero tensor gets scale 1.0 and all-zero ints.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if not np.isfinite(weights).all():
        raise NonFinite("quantize_tensor")
    peak = float(np.max(np.abs(weights))) if weights.size else 0.0
    scale = peak / INT8_MAX if peak > 0 else 1.0
    q = np.clip(np.rint(weights / scale), -INT8_MAX, INT8_MAX).astype(np.int8)
    return QuantizedTensor(values=q, scale=scale)


def quantize_int8(params: ModelParams) -> QuantizedModel:
    """Quantize every encoder tensor of a model"""
    tensors = OrderedDict()
    for name, data in params.encoder_tensors().items():
        try:
            tensors[name] = quantize_tensor(data)
        except NonFinite:
            raise NonFinite(f"quantize_int8 ({name})")
    head = {
        "w_scale": float(params.w_scale.data[0, 0]),
        "b_shift": float(params.b_shift.data[0, 0]),
    }
    model = QuantizedModel(config=params.config, tensors=tensors, head=head)
    logger.info(f"Quantized {len(tensors)} tensors to int8: {model.payload_bytes()} bytes")
    return model


def dequantize(model: QuantizedModel, dtype=np.float32) -> ModelParams:
    """Rebuild float parameters from a quantized model"""
    named: Dict[str, np.ndarray] = {name: q.dequantize() for name, q in model.tensors.items()}
    named["w_scale"] = np.array([[model.head["w_scale"]]])
    named["b_shift"] = np.array([[model.head["b_shift"]]])
    return ModelParams.from_named_tensors(model.config, named, dtype)


def max_roundtrip_error(params: ModelParams) -> Dict[str, Tuple[float, float]]:
    """Per tensor: (max |w - dequant(quant(w))|, scale)"""
    report = {}
    for name, data in params.encoder_tensors().items():
        q = quantize_tensor(data)
        report[name] = (float(np.max(np.abs(np.asarray(data, np.float64) - q.dequantize()))), q.scale)
    return report
