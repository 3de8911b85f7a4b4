"""The segment CNN: ``n`` blocks of conv -> [batchnorm] -> ReLU -> max-pool -> [dropout], then one dense head."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace

import numpy as np

from ..spectro import DB_FLOOR
from .layers import (BatchNorm2d, Conv2d, Dense, Dropout, Flatten, MaxPool2d, ReLU,
                     sigmoid, softmax)

BINARY = "binary"
MULTICLASS = "multiclass"


@dataclass
class NetConfig:
    n_hidden_blocks: int = 5
    kernel: int = 3
    stride: int = 1
    pad: int = 2
    pool: int = 2
    dropout: float = 0.2
    channels: tuple[int, ...] = (16, 32, 64, 128, 128)
    head: str = MULTICLASS
    n_classes: int = 5
    use_batchnorm: bool = True
    use_dropout: bool = True
    input_shape: tuple[int, int] = (128, 88)
    # re-reference each input segment to its own max before scaling
    segment_reference: bool = True

    def validate(self) -> None:
        if self.n_hidden_blocks < 1:
            raise ValueError("n_hidden_blocks must be >= 1")
        if len(self.channels) != self.n_hidden_blocks:
            raise ValueError(f"channels has {len(self.channels)} entries, "
                             f"expected {self.n_hidden_blocks}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        if self.head not in (BINARY, MULTICLASS):
            raise ValueError(f"unknown head {self.head!r}")
        if self.head == MULTICLASS and self.n_classes < 2:
            raise ValueError("multiclass head needs n_classes >= 2")

    @property
    def n_outputs(self) -> int:
        return 1 if self.head == BINARY else self.n_classes

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["input_shape"] = list(self.input_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        d["input_shape"] = tuple(d["input_shape"])
        return cls(**d)


def feature_shape(cfg: NetConfig) -> tuple[int, int, int]:
    """(channels, height, width) after the last block."""
    h, w = cfg.input_shape
    for _ in range(cfg.n_hidden_blocks):
        h = (h + 2 * cfg.pad - cfg.kernel) // cfg.stride + 1
        w = (w + 2 * cfg.pad - cfg.kernel) // cfg.stride + 1
        h, w = h // cfg.pool, w // cfg.pool
        if h < 1 or w < 1:
            raise ValueError(f"input {cfg.input_shape} collapses to zero size "
                             f"within {cfg.n_hidden_blocks} blocks")
    return cfg.channels[-1], h, w


def scale_input(x: np.ndarray, segment_reference: bool = True) -> np.ndarray:
    """Map dB values in [floor, 0] onto [0, 1].

    With ``segment_reference`` every sample is first shifted so its loudest
    cell sits at 0 dB. Spectrograms are referenced to the clip maximum, so
    without this a noise-only window of a loud clip is told apart from a
    background clip by level alone. All-floor (silent) samples are left as is.
    """
    if segment_reference:
        top = x.max(axis=(-2, -1), keepdims=True)
        x = np.maximum(x - np.where(top > DB_FLOOR, top, 0.0), DB_FLOOR)
    return (x - DB_FLOOR) / (-DB_FLOOR)


class Network:
    """Body of conv blocks plus a dense head.

    Parameter names are stable (``block{i}.conv.weight``, ``head.weight`` ...)
    and double as checkpoint keys.
    """

    def __init__(self, cfg: NetConfig, seed: int = 0, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.layers: list[tuple[str, object]] = []
        cin = 1
        for i, cout in enumerate(cfg.channels):
            self.layers.append((f"block{i}.conv",
                                Conv2d(cin, cout, cfg.kernel, cfg.stride, cfg.pad, rng, self.dtype)))
            if cfg.use_batchnorm:
                self.layers.append((f"block{i}.bn", BatchNorm2d(cout, dtype=self.dtype)))
            self.layers.append((f"block{i}.relu", ReLU()))
            self.layers.append((f"block{i}.pool", MaxPool2d(cfg.pool)))
            if cfg.use_dropout and cfg.dropout > 0:
                self.layers.append((f"block{i}.dropout", Dropout(cfg.dropout)))
            cin = cout
        c, h, w = feature_shape(cfg)
        self.flat_size = c * h * w
        self.layers.append(("flatten", Flatten()))
        self.layers.append(("head", Dense(self.flat_size, cfg.n_outputs, rng, self.dtype)))
        probe = self.logits(np.full((1, 1, *cfg.input_shape), DB_FLOOR, dtype=self.dtype))
        assert probe.shape == (1, cfg.n_outputs)

    # -- parameters ---------------------------------------------------------

    def named_params(self):
        for name, layer in self.layers:
            for key, arr in layer.params.items():
                yield f"{name}.{key}", layer, key, arr

    @property
    def params(self) -> dict[str, np.ndarray]:
        return {full: arr for full, _, _, arr in self.named_params()}

    @property
    def grads(self) -> dict[str, np.ndarray]:
        return {f"{name}.{key}": layer.grads[key]
                for name, layer in self.layers for key in layer.params if key in layer.grads}

    def set_param(self, full_name: str, value: np.ndarray) -> None:
        for full, layer, key, arr in self.named_params():
            if full == full_name:
                if value.shape != arr.shape:
                    raise ValueError(f"{full_name}: shape {value.shape} != {arr.shape}")
                layer.params[key] = np.asarray(value, dtype=arr.dtype)
                return
        raise KeyError(full_name)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for name, layer in self.layers:
            for key, arr in layer.params.items():
                state[f"{name}.{key}"] = arr.copy()
            for key, arr in layer.buffers.items():
                state[f"{name}.{key}"] = arr.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        seen = set()
        for name, layer in self.layers:
            for store in (layer.params, layer.buffers):
                for key, arr in store.items():
                    full = f"{name}.{key}"
                    if full not in state:
                        if strict:
                            raise KeyError(f"missing tensor {full}")
                        continue
                    value = np.asarray(state[full])
                    if value.shape != arr.shape:
                        raise ValueError(f"{full}: shape {value.shape} != {arr.shape}")
                    store[key] = value.astype(arr.dtype).copy()
                    seen.add(full)
        extra = set(state) - seen
        if strict and extra:
            raise KeyError(f"unexpected tensors {sorted(extra)}")

    # -- computation --------------------------------------------------------

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != 1 or tuple(x.shape[2:]) != tuple(self.cfg.input_shape):
            raise ValueError(f"expected input [B, 1, {self.cfg.input_shape[0]}, "
                             f"{self.cfg.input_shape[1]}], got {list(x.shape)}")
        return x

    def logits(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        x = scale_input(self._check_input(np.asarray(x, dtype=self.dtype)), self.cfg.segment_reference)
        for _, layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def activate(self, z: np.ndarray) -> np.ndarray:
        if self.cfg.head == BINARY:
            return sigmoid(z[:, 0])
        return softmax(z)

    def forward(self, x: np.ndarray, train: bool = False, rng=None) -> np.ndarray:
        """Probabilities: ``[B]`` for the binary head, ``[B, K]`` for multiclass."""
        return self.activate(self.logits(x, train, rng))

    def backward(self, dlogits: np.ndarray) -> dict[str, np.ndarray]:
        d = np.asarray(dlogits, dtype=self.dtype)
        if d.ndim == 1:
            d = d[:, None]
        for _, layer in reversed(self.layers):
            d = layer.backward(d)
        return self.grads

    def predict_proba(self, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
        outs = [self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0)

    # -- transfer -----------------------------------------------------------

    def with_head(self, head: str, n_classes: int = 2, seed: int = 0, **overrides) -> "Network":
        """New network sharing this body's conv weights, with a fresh head.

        ``overrides`` may switch batchnorm/dropout on or off; newly added
        batchnorm layers start at identity.
        """
        cfg = replace(self.cfg, head=head, n_classes=n_classes, **overrides)
        net = Network(cfg, seed=seed, dtype=self.dtype)
        body = {k: v for k, v in self.state_dict().items() if not k.startswith("head.")}
        own = net.state_dict()
        for k, v in body.items():
            if k in own and own[k].shape == v.shape:
                own[k] = v
        net.load_state_dict(own)
        return net


def forward(model: Network, batch: np.ndarray) -> np.ndarray:
    """Evaluation-mode forward pass."""
    return model.forward(batch, train=False)
