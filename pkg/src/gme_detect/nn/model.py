"""Sequential classifier and the reference 1-D CNN / CNN-SE stack."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..rng import derive_seed, make_rng
from .layers import (
    BatchNorm,
    Conv1D,
    Dense,
    GlobalAvgPool,
    Layer,
    MaxPool1D,
    ReLU,
    SqueezeExcite,
    layer_from_config,
    softmax,
    softmax_cross_entropy,
)

DEFAULT_CHANNELS = (16, 32)
DEFAULT_REDUCTION = 4
NUM_CLASSES = 2


@dataclass
class ModelSpec:
    """Ordered layer configs plus the input length; ``softmax`` is the implicit head."""

    feature_length: int
    layers: list[dict] = field(default_factory=list)
    se_enabled: bool = False
    reduction: int = DEFAULT_REDUCTION

    def to_dict(self) -> dict:
        return {
            "feature_length": self.feature_length,
            "layers": [dict(c) for c in self.layers] + [{"kind": "softmax"}],
            "se_enabled": self.se_enabled,
            "reduction": self.reduction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        layers = [dict(c) for c in d["layers"]]
        if not layers or layers[-1]["kind"] != "softmax":
            raise ValueError("classifier spec must end in exactly one softmax")
        layers = layers[:-1]
        if any(c["kind"] == "softmax" for c in layers):
            raise ValueError("classifier spec must end in exactly one softmax")
        return cls(d["feature_length"], layers, bool(d["se_enabled"]), int(d["reduction"]))


class Model:
    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self.layers: list[Layer] = [layer_from_config(c) for c in spec.layers]
        self._check_shapes()

    def _check_shapes(self):
        shape: tuple[int, ...] = (self.spec.feature_length, 1)
        for layer in self.layers:
            if isinstance(layer, Conv1D) and shape[-1] != layer.c_in:
                raise ValueError(f"conv1d expects {layer.c_in} channels, gets {shape[-1]}")
            if isinstance(layer, (BatchNorm, SqueezeExcite)) and shape[-1] != layer.channels:
                raise ValueError(f"{layer.kind} expects {layer.channels} channels, gets {shape[-1]}")
            if isinstance(layer, MaxPool1D) and shape[0] < 2:
                raise ValueError("sequence too short for pooling")
            if isinstance(layer, Dense) and shape != (layer.f_in,):
                raise ValueError(f"dense expects ({layer.f_in},), gets {shape}")
            shape = layer.output_shape(shape)
        if shape != (NUM_CLASSES,):
            raise ValueError(f"network output shape {shape} is not ({NUM_CLASSES},)")

    # -- parameters -------------------------------------------------------

    def named_params(self):
        """``(name, layer, key)`` for every trainable array, in a fixed order."""
        for i, layer in enumerate(self.layers):
            for key in layer.params:
                yield f"{i}.{layer.kind}.{key}", layer, key

    def param_dict(self) -> dict[str, np.ndarray]:
        return {name: layer.params[key] for name, layer, key in self.named_params()}

    def grad_dict(self) -> dict[str, np.ndarray]:
        return {name: layer.grads[key] for name, layer, key in self.named_params()}

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for i, layer in enumerate(self.layers):
            for key, arr in layer.state().items():
                out[f"{i}.{layer.kind}.{key}"] = arr
        return out

    def load_state(self, params: dict[str, np.ndarray], state: dict[str, np.ndarray]):
        for name, layer, key in self.named_params():
            arr = np.asarray(params[name], dtype=np.float64)
            if arr.shape != layer.params[key].shape:
                raise ValueError(f"parameter {name} has shape {arr.shape}, expected {layer.params[key].shape}")
            layer.params[key] = arr.copy()
        for i, layer in enumerate(self.layers):
            for key in layer.state():
                setattr(layer, key, np.asarray(state[f"{i}.{layer.kind}.{key}"], dtype=np.float64).copy())

    def num_params(self) -> int:
        return sum(layer.params[key].size for _, layer, key in self.named_params())

    # -- passes -----------------------------------------------------------

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        """Logits for a batch ``(N, L)`` or ``(N, L, 1)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[1] != self.spec.feature_length:
            raise ValueError(f"model expects length {self.spec.feature_length}, got {x.shape[1]}")
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dlogits: np.ndarray) -> np.ndarray:
        d = dlogits
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return d

    def l2_penalty(self, coeff: float) -> float:
        total = 0.0
        for layer in self.layers:
            for key in layer.decay:
                total += float(np.sum(layer.params[key] ** 2))
        return 0.5 * coeff * total

    def loss_and_grads(self, x: np.ndarray, targets: np.ndarray, l2: float = 0.0):
        """Training-mode loss (cross-entropy + L2) and gradients.

        Returns ``(loss, probabilities, d loss / d input)``.
        """
        logits = self.forward(x, train=True)
        ce, probs, dlogits = softmax_cross_entropy(logits, targets)
        dx = self.backward(dlogits)
        if l2:
            for layer in self.layers:
                for key in layer.decay:
                    layer.grads[key] = layer.grads[key] + l2 * layer.params[key]
        return ce + self.l2_penalty(l2), probs, dx

    def recalibrate_batchnorm(self, x: np.ndarray, batch_size: int = 256) -> None:
        """Set batchnorm running statistics to exact population statistics of ``x``.

        Layers are processed in network order, each seeing the inputs it will
        get at inference time, i.e. produced with the already recalibrated
        layers before it.  Variances are unbiased, like the moving averages
        they replace.  The result does not depend on ``batch_size``.
        """
        x = np.asarray(x, dtype=np.float64)
        if x.ndim == 2:
            x = x[:, :, None]
        if x.shape[0] < 2:
            raise ValueError("recalibration needs at least 2 samples")
        for i, layer in enumerate(self.layers):
            if not isinstance(layer, BatchNorm):
                continue
            count, mean, m2 = 0, np.zeros(layer.channels), np.zeros(layer.channels)
            for start in range(0, x.shape[0], batch_size):
                h = x[start : start + batch_size]
                for prev in self.layers[:i]:
                    h = prev.forward(h)
                h = h.reshape(-1, layer.channels)
                # merge chunk moments (Chan et al.)
                n_b, mean_b = h.shape[0], h.mean(axis=0)
                m2_b = np.sum((h - mean_b) ** 2, axis=0)
                delta = mean_b - mean
                total = count + n_b
                mean = mean + delta * (n_b / total)
                m2 = m2 + m2_b + delta**2 * (count * n_b / total)
                count = total
            layer.running_mean = mean
            layer.running_var = m2 / max(count - 1, 1)

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        out = [softmax(self.forward(x[i : i + batch_size])) for i in range(0, x.shape[0], batch_size)]
        return np.concatenate(out) if out else np.zeros((0, NUM_CLASSES))

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(x), axis=1)


def reference_spec(
    feature_length: int,
    se_enabled: bool,
    channels: tuple[int, int] = DEFAULT_CHANNELS,
    reduction: int = DEFAULT_REDUCTION,
    kernel: int = 2,
) -> ModelSpec:
    """conv-bn-relu-pool twice, optional SE, global pool, dense(2)."""
    if feature_length < 4:
        raise ValueError("feature_length must be at least 4")
    c1, c2 = channels
    layers = [
        Conv1D(1, c1, kernel).config(),
        BatchNorm(c1).config(),
        {"kind": "relu"},
        {"kind": "maxpool"},
        Conv1D(c1, c2, kernel).config(),
        BatchNorm(c2).config(),
        {"kind": "relu"},
        {"kind": "maxpool"},
    ]
    if se_enabled:
        layers.append(SqueezeExcite(c2, reduction).config())
    layers += [{"kind": "global_pool"}, Dense(c2, NUM_CLASSES).config()]
    return ModelSpec(feature_length, layers, se_enabled, reduction)


def initialize(model: Model, seed: int) -> Model:
    """He-uniform weights (bound ``sqrt(6 / fan_in)``), zero biases, gamma 1, beta 0."""
    for i, layer in enumerate(model.layers):
        rng = make_rng(derive_seed(seed, i))
        if isinstance(layer, Conv1D):
            fan_in = layer.k * layer.c_in
            bound = np.sqrt(6.0 / fan_in)
            layer.params["w"] = rng.uniform(-bound, bound, layer.params["w"].shape)
        elif isinstance(layer, Dense):
            bound = np.sqrt(6.0 / layer.f_in)
            layer.params["w"] = rng.uniform(-bound, bound, layer.params["w"].shape)
        elif isinstance(layer, SqueezeExcite):
            for key in ("w1", "w2"):
                w = layer.params[key]
                bound = np.sqrt(6.0 / w.shape[1])
                layer.params[key] = rng.uniform(-bound, bound, w.shape)
    return model


def build_model(
    feature_length: int,
    se_enabled: bool,
    seed: int,
    channels: tuple[int, int] = DEFAULT_CHANNELS,
    reduction: int = DEFAULT_REDUCTION,
) -> Model:
    return initialize(Model(reference_spec(feature_length, se_enabled, channels, reduction)), seed)


__all__ = ["Model", "ModelSpec", "NUM_CLASSES", "build_model", "initialize", "reference_spec"]
