"""SegNet-style encoder-decoder mapping bark patches to half-plane densities."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .. import io
from ..errors import DimensionError, FormatError, StateError
from .layers import ConcatInput, Conv2D, Dropout, MaxPool2, PReLU, Upsample2

CHECKPOINT_FORMAT = "barkknots-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelSpec:
    channels: tuple = (16, 32, 64)
    in_channels: int = 3
    kernel: int = 3
    dropout: float = 0.1
    prelu_init: float = 0.25
    input_skip: bool = True

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        d = dict(d)
        d["channels"] = tuple(d["channels"])
        return cls(**d)

    @property
    def decoder_channels(self) -> tuple:
        return tuple(reversed(self.channels[:-1])) + (self.channels[0],)


class EncoderDecoder:
    """Encoder blocks ``conv -> PReLU -> dropout -> maxpool``; decoder blocks
    ``upsample -> conv -> PReLU -> dropout``; a 1x1 convolution projects to
    one output channel.  With ``input_skip`` the last decoder convolution
    also sees the raw input, so full-resolution detail lost to pooling (the
    exact bark edge) is available where the output is formed.  Input is ``(N, C, H, W)`` (or ``(N, H, W)`` when
    ``in_channels`` is 1) and output ``(N, H, W)``, with ``H`` and ``W``
    divisible by ``2 ** len(channels)``.
    """

    def __init__(self, spec: ModelSpec = ModelSpec(), seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        layers = []
        c_prev = spec.in_channels
        for c in spec.channels:
            layers += [Conv2D(c_prev, c, spec.kernel, rng, dtype), PReLU(c, spec.prelu_init, dtype), Dropout(spec.dropout), MaxPool2()]
            c_prev = c
        for i, c in enumerate(spec.decoder_channels):
            layers.append(Upsample2())
            if spec.input_skip and i == len(spec.channels) - 1:
                layers.append(ConcatInput())
                c_prev += spec.in_channels
            layers += [Conv2D(c_prev, c, spec.kernel, rng, dtype), PReLU(c, spec.prelu_init, dtype), Dropout(spec.dropout)]
            c_prev = c
        layers.append(Conv2D(c_prev, 1, 1, rng, dtype))
        self.layers = layers
        self.set_dropout_seed(seed)
        self._output = None

    # parameters ------------------------------------------------------------

    def named_layers(self):
        for i, layer in enumerate(self.layers):
            yield f"{i:02d}.{type(layer).__name__.lower()}", layer

    def parameters(self) -> dict:
        return {f"{name}.{k}": v for name, layer in self.named_layers() for k, v in layer.params.items()}

    def gradients(self) -> dict:
        return {f"{name}.{k}": layer.grads[k] for name, layer in self.named_layers() for k in layer.params}

    def parameter_count(self) -> int:
        return int(sum(v.size for v in self.parameters().values()))

    def get_weights(self) -> dict:
        return {k: v.copy() for k, v in self.parameters().items()}

    def set_weights(self, weights: dict):
        params = self.parameters()
        if set(weights) != set(params):
            raise FormatError("weight names do not match the model")
        for k, v in params.items():
            if v.shape != weights[k].shape:
                raise DimensionError(f"{k}: shape {weights[k].shape} != {v.shape}")
            v[...] = weights[k]

    def dropout_layers(self):
        return [l for l in self.layers if isinstance(l, Dropout)]

    def set_dropout_seed(self, seed):
        ss = np.random.SeedSequence(seed)
        for layer, child in zip(self.dropout_layers(), ss.spawn(len(self.dropout_layers()))):
            layer.rng = np.random.default_rng(child)

    def freeze_dropout(self, frozen: bool = True):
        for layer in self.dropout_layers():
            layer.frozen = frozen

    def replica(self) -> "EncoderDecoder":
        """Model sharing these parameters with independent caches and masks."""
        other = object.__new__(EncoderDecoder)
        other.__dict__.update(self.__dict__)
        other.layers = [l.clone() for l in self.layers]
        other._output = None
        return other

    # passes ------------------------------------------------------------------

    def forward(self, x, train: bool = False):
        x = np.asarray(x, dtype=self.dtype)
        if x.ndim == 3:
            x = x[:, None]
        if x.ndim != 4 or x.shape[1] != self.spec.in_channels:
            raise DimensionError(f"expected (N, {self.spec.in_channels}, H, W) input, got {x.shape}")
        f = 2 ** len(self.spec.channels)
        if x.shape[2] % f or x.shape[3] % f:
            raise DimensionError(f"spatial dims {x.shape[2:]} must be divisible by {f}")
        src = x
        for layer in self.layers:
            if isinstance(layer, ConcatInput):
                layer.source = src
            x = layer.forward(x, train)
        out = x[:, 0]
        self._output = out if train else None
        return out

    def backward(self, targets, scale: float = 1.0):
        """Mean squared error against ``targets`` and gradients of every
        parameter.  Requires a preceding ``forward(..., train=True)``.

        ``scale`` multiplies the loss (and gradients); data-parallel
        training uses it to weight partial batches.
        """
        if self._output is None:
            raise StateError("backward called without a training forward pass")
        y = self._output
        t = np.asarray(targets, dtype=self.dtype)
        if t.shape != y.shape:
            raise DimensionError(f"targets {t.shape} do not match outputs {y.shape}")
        r = y - t
        loss = float(np.mean(r.astype(np.float64) ** 2)) * scale
        d = (2.0 * scale / r.size) * r
        d = d[:, None].astype(self.dtype)
        for layer in reversed(self.layers):
            d = layer.backward(d)
        self._output = None
        return loss, self.gradients()

    def predict(self, x, batch_size: int = 64):
        x = np.asarray(x)
        return np.concatenate([self.forward(x[i : i + batch_size]) for i in range(0, len(x), batch_size)])


def save_checkpoint(model: EncoderDecoder, path, extra: dict | None = None):
    """WLOG record stream: a JSON header then one float64 record per parameter."""
    params = model.parameters()
    meta = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_spec": model.spec.to_dict(),
        "dtype": model.dtype.name,
        "params": list(params),
        "extra": extra or {},
    }
    records = [io.encode_json_record(meta)] + [np.asarray(v, dtype=np.float64) for v in params.values()]
    io.write_records(records, path)


def load_checkpoint(path):
    records = io.read_records(path)
    if not records:
        raise FormatError("empty checkpoint")
    meta = io.decode_json_record(records[0])
    if meta.get("format") != CHECKPOINT_FORMAT or meta.get("version") != CHECKPOINT_VERSION:
        raise FormatError("not a supported checkpoint")
    if len(records) - 1 != len(meta["params"]):
        raise FormatError("parameter count mismatch")
    model = EncoderDecoder(ModelSpec.from_dict(meta["model_spec"]), dtype=meta["dtype"])
    model.set_weights({k: v.astype(model.dtype) for k, v in zip(meta["params"], records[1:])})
    return model, meta.get("extra", {})
