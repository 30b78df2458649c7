"""
Utterance-embedding network: stacked LSTM layers and a linear projection.

Packed gate order in W, U and the bias is [i, f, g, o].
"""

import logging
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from kwskit import autodiff as ad
from kwskit.audio_processor import FeatureMatrix
from kwskit.autodiff import Value
from kwskit.errors import ConfigError, EmptyInput, ShapeMismatch

logger = logging.getLogger(__name__)

GATES = ("i", "f", "g", "o")


@dataclass(frozen=True)
class ModelConfig:
    input_dim: int = 40
    num_layers: int = 3
    hidden_dim: int = 384
    embedding_dim: int = 128

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not isinstance(value, (int, np.integer)) or value <= 0:
                raise ConfigError(f"ModelConfig.{f.name} must be a positive integer, got {value!r}")

    @classmethod
    def from_dict(cls, values: Optional[Dict[str, Any]]) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        return cls(**{k: int(v) for k, v in (values or {}).items() if k in known})

    def to_dict(self) -> Dict[str, int]:
        return asdict(self)


@dataclass
class LayerParams:
    W: Value  # (4h, in)
    U: Value  # (4h, h)
    b: Value  # (1, 4h)

    @property
    def hidden_dim(self) -> int:
        return self.U.shape[1]


@dataclass
class ModelParams:
    config: ModelConfig
    layers: List[LayerParams]
    proj_W: Value  # (e, h)
    proj_b: Value  # (1, e)
    w_scale: Value  # (1, 1)
    b_shift: Value  # (1, 1)

    @property
    def dtype(self):
        return self.proj_W.dtype

    def parameters(self) -> List[Value]:
        """Trainable tensors in a fixed order"""
        params: List[Value] = []
        for layer in self.layers:
            params.extend([layer.W, layer.U, layer.b])
        params.extend([self.proj_W, self.proj_b, self.w_scale, self.b_shift])
        return params

    def named_tensors(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((p.name, p.data) for p in self.parameters())

    def encoder_tensors(self) -> "OrderedDict[str, np.ndarray]":
        """Everything the embedding needs; the loss-head scalars are left out"""
        named = self.named_tensors()
        return OrderedDict((k, v) for k, v in named.items() if k not in ("w_scale", "b_shift"))

    @classmethod
    def from_named_tensors(cls, config: ModelConfig, tensors: Dict[str, np.ndarray],
                           dtype=np.float32) -> "ModelParams":
        expected = expected_shapes(config)
        for name, shape in expected.items():
            if name not in tensors:
                raise ShapeMismatch(f"missing tensor {name}", shape)
            if tuple(np.shape(tensors[name])) != shape:
                raise ShapeMismatch(f"tensor {name}", shape, np.shape(tensors[name]))

        def p(name):
            return ad.parameter(tensors[name], name, dtype)

        layers = [LayerParams(p(f"lstm{k}.W"), p(f"lstm{k}.U"), p(f"lstm{k}.b"))
                  for k in range(config.num_layers)]
        return cls(config, layers, p("proj.W"), p("proj.b"), p("w_scale"), p("b_shift"))

    def copy(self, dtype=None) -> "ModelParams":
        return ModelParams.from_named_tensors(self.config, self.named_tensors(), dtype or self.dtype)

    def clamp_w_scale(self, minimum: float = 1e-6) -> None:
        """Keep the similarity scale positive after an optimizer step"""
        np.maximum(self.w_scale.data, minimum, out=self.w_scale.data)


def expected_shapes(config: ModelConfig) -> "OrderedDict[str, Tuple[int, int]]":
    h, e = config.hidden_dim, config.embedding_dim
    shapes: "OrderedDict[str, Tuple[int, int]]" = OrderedDict()
    for k in range(config.num_layers):
        in_dim = config.input_dim if k == 0 else h
        shapes[f"lstm{k}.W"] = (4 * h, in_dim)
        shapes[f"lstm{k}.U"] = (4 * h, h)
        shapes[f"lstm{k}.b"] = (1, 4 * h)
    shapes["proj.W"] = (e, h)
    shapes["proj.b"] = (1, e)
    shapes["w_scale"] = (1, 1)
    shapes["b_shift"] = (1, 1)
    return shapes


def _xavier(rng: np.random.Generator, fan_out: int, fan_in: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_out, fan_in))


def init_params(config: ModelConfig, seed: int, dtype=np.float32,
                w_init: float = 10.0, b_init: float = -5.0) -> ModelParams:
    """
    Xavier-uniform weights, zero biases except the forget gate (1.0)

    Args:
        config (ModelConfig): Architecture
        seed (int): RNG seed; the same seed always yields the same params
        dtype: float32 for training, float64 for gradient checks
        w_init, b_init: Initial loss-head scale and shift

    Returns:
        ModelParams: Freshly initialised parameters
    """
    if w_init <= 0:
        raise ConfigError(f"w_init must be > 0, got {w_init}")
    rng = np.random.default_rng(seed)
    h = config.hidden_dim
    tensors: Dict[str, np.ndarray] = {}
    for k in range(config.num_layers):
        in_dim = config.input_dim if k == 0 else h
        tensors[f"lstm{k}.W"] = _xavier(rng, 4 * h, in_dim)
        tensors[f"lstm{k}.U"] = _xavier(rng, 4 * h, h)
        bias = np.zeros((1, 4 * h))
        bias[0, h:2 * h] = 1.0
        tensors[f"lstm{k}.b"] = bias
    tensors["proj.W"] = _xavier(rng, config.embedding_dim, h)
    tensors["proj.b"] = np.zeros((1, config.embedding_dim))
    tensors["w_scale"] = np.array([[w_init]])
    tensors["b_shift"] = np.array([[b_init]])
    return ModelParams.from_named_tensors(config, tensors, dtype)


def lstm_cell(x_t: Value, h_prev: Value, c_prev: Value, layer: LayerParams,
              W_t: Optional[Value] = None, U_t: Optional[Value] = None) -> Tuple[Value, Value]:
    """
    One LSTM step

    W_t / U_t are the transposed weights; pass them in when stepping through a
    sequence so the transpose is recorded once instead of once per frame.
    """
    h = layer.hidden_dim
    if x_t.shape[1] != layer.W.shape[1] or h_prev.shape[1] != h or c_prev.shape != h_prev.shape:
        raise ShapeMismatch("lstm_cell", x_t.shape, h_prev.shape, c_prev.shape, layer.W.shape)
    W_t = W_t if W_t is not None else ad.transpose(layer.W)
    U_t = U_t if U_t is not None else ad.transpose(layer.U)

    gates = ad.add(ad.add(ad.matmul(x_t, W_t), ad.matmul(h_prev, U_t)), layer.b)
    i = ad.sigmoid(ad.slice_cols(gates, 0, h))
    f = ad.sigmoid(ad.slice_cols(gates, h, 2 * h))
    g = ad.tanh(ad.slice_cols(gates, 2 * h, 3 * h))
    o = ad.sigmoid(ad.slice_cols(gates, 3 * h, 4 * h))
    c_t = ad.add(ad.mul(f, c_prev), ad.mul(i, g))
    h_t = ad.mul(o, ad.tanh(c_t))
    return h_t, c_t


def embed_batch(batch: Sequence[FeatureMatrix], params: ModelParams) -> Value:
    """
    Embed a batch of utterances of possibly different lengths

    Each row is the L2-normalised projection of the top layer's hidden state
    at that utterance's own final frame. Padded steps leave (h, c) untouched
    through a 0/1 mask, so rows match embed_utterance exactly.

    Returns:
        Value: (B, embedding_dim) unit rows
    """
    if not batch:
        raise EmptyInput("embed_batch needs at least one utterance")
    config = params.config
    dtype = params.dtype
    lengths = np.array([fm.num_frames for fm in batch])
    if lengths.min() < 1:
        raise EmptyInput("Utterance with zero frames")
    for fm in batch:
        if fm.dim != config.input_dim:
            raise ShapeMismatch("embed_batch", (fm.num_frames, fm.dim), (None, config.input_dim))

    num_utts, max_len, min_len = len(batch), int(lengths.max()), int(lengths.min())
    padded = np.zeros((max_len, num_utts, config.input_dim), dtype=dtype)
    for j, fm in enumerate(batch):
        padded[:fm.num_frames, j, :] = fm.frames
    inputs: List[Value] = [ad.constant(padded[t]) for t in range(max_len)]

    h_dim = config.hidden_dim
    masks: Dict[int, Tuple[Value, Value]] = {}
    for t in range(min_len, max_len):
        active = np.repeat((lengths > t).astype(dtype)[:, None], h_dim, axis=1)
        masks[t] = (ad.constant(active), ad.constant(1.0 - active))

    h = None
    for layer in params.layers:
        W_t, U_t = ad.transpose(layer.W), ad.transpose(layer.U)
        h = ad.constant(np.zeros((num_utts, h_dim), dtype=dtype))
        c = ad.constant(np.zeros((num_utts, h_dim), dtype=dtype))
        outputs: List[Value] = []
        for t in range(max_len):
            h_new, c_new = lstm_cell(inputs[t], h, c, layer, W_t, U_t)
            if t < min_len:
                h, c = h_new, c_new
            else:
                keep, hold = masks[t]
                h = ad.add(ad.mul(keep, h_new), ad.mul(hold, h))
                c = ad.add(ad.mul(keep, c_new), ad.mul(hold, c))
            outputs.append(h)
        inputs = outputs

    projected = ad.add(ad.matmul(h, ad.transpose(params.proj_W)), params.proj_b)
    return ad.l2_normalize_rows(projected)


def embed_utterance(features: FeatureMatrix, params: ModelParams) -> np.ndarray:
    """Unit-norm embedding of one utterance (inference only, nothing recorded)"""
    if features.num_frames < 1:
        raise EmptyInput("Utterance with zero frames")
    with ad.no_grad():
        return embed_batch([features], params).data[0].copy()


def embed_many(utterances: Sequence[FeatureMatrix], params: ModelParams,
               batch_size: int = 64) -> np.ndarray:
    """Inference over many utterances in length-sorted chunks

    Returns:
        np.ndarray: (N, embedding_dim) in the input order
    """
    order = sorted(range(len(utterances)), key=lambda k: utterances[k].num_frames)
    out = np.zeros((len(utterances), params.config.embedding_dim), dtype=np.float64)
    with ad.no_grad():
        for start in range(0, len(order), batch_size):
            chunk = order[start:start + batch_size]
            emb = embed_batch([utterances[k] for k in chunk], params)
            out[chunk] = emb.data
    return out


def count_params(config: ModelConfig) -> int:
    """sum over layers of 4h(in + h + 1), plus h*e + e for the projection"""
    h, e = config.hidden_dim, config.embedding_dim
    total = 0
    for k in range(config.num_layers):
        in_dim = config.input_dim if k == 0 else h
        total += 4 * h * (in_dim + h + 1)
    return total + h * e + e


def count_allocated(params: ModelParams) -> int:
    """Entries actually allocated for the encoder (loss head excluded)"""
    return int(sum(t.size for t in params.encoder_tensors().values()))


def model_size_report(config: ModelConfig) -> Dict[str, int]:
    """Parameter count and serialized sizes for float32 and int8 weights"""
    n = count_params(config)
    num_tensors = 3 * config.num_layers + 2
    return {
        "parameters": n,
        "float32_bytes": 4 * n,
        "int8_bytes": n + 4 * num_tensors,
    }
