"""Two-tower fusion classifier: audio and video MLP encoders, feature
concatenation, and a shared classification head.

The whole model is plain numpy with hand-written reverse-mode gradients,
so every gradient used by training and by the attacks is checkable
against finite differences coordinate by coordinate. Models are treated
as immutable values after construction; training works on a private
copy. Concatenation order is audio-then-video everywhere.
"""
from __future__ import annotations

import copy
import json
import struct
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError, EmptyInputError, FormatError, ShapeError

ACTIVATIONS = ("linear", "relu", "tanh")
LOSS_KINDS = ("softmax_ce", "sigmoid_bce")

_CHECKPOINT_MAGIC = b"MMW1"
_CHECKPOINT_VERSION = 1


@dataclass
class Affine:
    """One affine layer: y = act(W x + b). weight is (out, in)."""

    weight: np.ndarray
    bias: np.ndarray
    activation: str = "linear"

    def __post_init__(self) -> None:
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.ndim != 1:
            raise ShapeError("affine layer needs 2-D weight and 1-D bias")
        if self.weight.shape[0] != self.bias.shape[0]:
            raise ShapeError(
                f"weight rows {self.weight.shape[0]} != bias length {self.bias.shape[0]}"
            )
        if self.activation not in ACTIVATIONS:
            raise DomainError(f"unknown activation {self.activation!r}")

    @property
    def dim_in(self) -> int:
        return self.weight.shape[1]

    @property
    def dim_out(self) -> int:
        return self.weight.shape[0]


def _check_chain(layers: Sequence[Affine], name: str) -> None:
    for prev, nxt in zip(layers, layers[1:]):
        if prev.dim_out != nxt.dim_in:
            raise ShapeError(
                f"{name}: layer output {prev.dim_out} feeds layer input {nxt.dim_in}"
            )


@dataclass
class FusionModel:
    encoder_audio: list[Affine]
    encoder_video: list[Affine]
    head: list[Affine]
    activation: str = "relu"
    loss_kind: str = "softmax_ce"

    def __post_init__(self) -> None:
        if not self.encoder_audio or not self.encoder_video or not self.head:
            raise ShapeError("encoders and head each need at least one layer")
        if self.activation not in ("relu", "tanh"):
            raise DomainError(f"model activation must be relu or tanh, got {self.activation!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise DomainError(f"unknown loss kind {self.loss_kind!r}")
        _check_chain(self.encoder_audio, "encoder_audio")
        _check_chain(self.encoder_video, "encoder_video")
        _check_chain(self.head, "head")
        d = self.encoder_audio[-1].dim_out + self.encoder_video[-1].dim_out
        if self.head[0].dim_in != d:
            raise ShapeError(
                f"head expects input {self.head[0].dim_in}, bottleneck is {d}"
            )

    @property
    def d_audio(self) -> int:
        return self.encoder_audio[0].dim_in

    @property
    def d_video(self) -> int:
        return self.encoder_video[0].dim_in

    @property
    def bottleneck_dim(self) -> int:
        return self.encoder_audio[-1].dim_out + self.encoder_video[-1].dim_out

    @property
    def n_classes(self) -> int:
        return self.head[-1].dim_out

    def copy(self) -> "FusionModel":
        return copy.deepcopy(self)


@dataclass
class MultiModalSample:
    x_audio: np.ndarray
    x_video: np.ndarray
    label: np.ndarray

    def __post_init__(self) -> None:
        from .numerics import as_vector

        self.x_audio = as_vector(self.x_audio)
        self.x_video = as_vector(self.x_video)
        self.label = as_vector(self.label)
        if np.any(self.label < 0.0) or np.any(self.label > 1.0):
            raise DomainError("label entries must lie in [0, 1]")


@dataclass
class Dataset:
    samples: list[MultiModalSample]
    d_audio: int
    d_video: int
    n_classes: int
    multi_label: bool = False
    _arrays: tuple | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        for i, s in enumerate(self.samples):
            if s.x_audio.shape != (self.d_audio,):
                raise ShapeError(f"sample {i}: audio dim {s.x_audio.shape[0]} != {self.d_audio}")
            if s.x_video.shape != (self.d_video,):
                raise ShapeError(f"sample {i}: video dim {s.x_video.shape[0]} != {self.d_video}")
            if s.label.shape != (self.n_classes,):
                raise ShapeError(f"sample {i}: label length {s.label.shape[0]} != {self.n_classes}")
            if not self.multi_label and np.count_nonzero(s.label == 1.0) != 1:
                raise DomainError(f"sample {i}: single-label mode needs exactly one entry == 1")

    def __len__(self) -> int:
        return len(self.samples)

    def as_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(X_audio, X_video, Y) stacked as (n, d) float64 matrices."""
        if self._arrays is None:
            if self.samples:
                xa = np.stack([s.x_audio for s in self.samples])
                xv = np.stack([s.x_video for s in self.samples])
                y = np.stack([s.label for s in self.samples])
            else:
                xa = np.zeros((0, self.d_audio))
                xv = np.zeros((0, self.d_video))
                y = np.zeros((0, self.n_classes))
            self._arrays = (xa, xv, y)
        return self._arrays

    def subset(self, indices: Sequence[int]) -> "Dataset":
        return Dataset(
            samples=[self.samples[i] for i in indices],
            d_audio=self.d_audio,
            d_video=self.d_video,
            n_classes=self.n_classes,
            multi_label=self.multi_label,
        )


@dataclass
class TrainConfig:
    epochs: int
    batch_size: int
    learning_rate: float
    optimizer: str = "sgd-momentum"
    seed: int = 0
    momentum: float = 0.9

    def __post_init__(self) -> None:
        if self.epochs < 0:
            raise DomainError("epochs must be >= 0")
        if self.batch_size < 1:
            raise DomainError("batch_size must be >= 1")
        if not self.learning_rate > 0:
            raise DomainError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "sgd-momentum"):
            raise DomainError(f"unknown optimizer {self.optimizer!r}")


# ---------------------------------------------------------------------------
# construction


def _glorot(rng: np.random.Generator, dim_out: int, dim_in: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (dim_in + dim_out))
    return rng.uniform(-bound, bound, size=(dim_out, dim_in))


def _build_tower(
    rng: np.random.Generator, dims: list[int], activation: str
) -> list[Affine]:
    # hidden layers use the model activation, the final layer stays linear
    layers = []
    for i, (din, dout) in enumerate(zip(dims[:-1], dims[1:])):
        act = activation if i < len(dims) - 2 else "linear"
        layers.append(Affine(_glorot(rng, dout, din), np.zeros(dout), act))
    return layers


def build_fusion_model(
    d_audio: int,
    d_video: int,
    n_classes: int,
    *,
    bottleneck_audio: int,
    bottleneck_video: int,
    hidden_audio: Sequence[int] = (),
    hidden_video: Sequence[int] = (),
    hidden_head: Sequence[int] = (),
    activation: str = "relu",
    loss_kind: str = "softmax_ce",
    seed: int = 0,
) -> FusionModel:
    """Glorot-uniform initialized fusion model, deterministic given seed.

    Biases start at zero. Draw order is fixed (audio tower, video tower,
    head; weights before biases) so identical seeds give bit-identical
    parameters.
    """
    rng = np.random.default_rng(seed)
    enc_a = _build_tower(rng, [d_audio, *hidden_audio, bottleneck_audio], activation)
    enc_v = _build_tower(rng, [d_video, *hidden_video, bottleneck_video], activation)
    head = _build_tower(
        rng, [bottleneck_audio + bottleneck_video, *hidden_head, n_classes], activation
    )
    return FusionModel(enc_a, enc_v, head, activation=activation, loss_kind=loss_kind)


def identity_encoder(dim: int) -> list[Affine]:
    """Square affine layer with identity weight and zero bias, no activation."""
    return [Affine(np.eye(dim), np.zeros(dim), "linear")]


# ---------------------------------------------------------------------------
# forward / backward primitives (batched; rows are samples)


def _act(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "tanh":
        return np.tanh(z)
    return z


def _act_grad(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == "relu":
        return (z > 0.0).astype(np.float64)
    if kind == "tanh":
        t = np.tanh(z)
        return 1.0 - t * t
    return np.ones_like(z)


def _tower_forward(layers: Sequence[Affine], x: np.ndarray):
    caches = []
    a = x
    for layer in layers:
        z = a @ layer.weight.T + layer.bias
        caches.append((a, z))
        a = _act(z, layer.activation)
    return a, caches


def _tower_backward(layers: Sequence[Affine], caches, d_out: np.ndarray):
    """Backprop d_out through the tower; returns (d_input, [(dW, db), ...])."""
    grads: list[tuple[np.ndarray, np.ndarray]] = []
    da = d_out
    for layer, (a_in, z) in zip(reversed(layers), reversed(caches)):
        dz = da * _act_grad(z, layer.activation)
        grads.append((dz.T @ a_in, dz.sum(axis=0)))
        da = dz @ layer.weight
    grads.reverse()
    return da, grads


def _forward_batch(model: FusionModel, xa: np.ndarray, xv: np.ndarray):
    if xa.shape[1] != model.d_audio or xv.shape[1] != model.d_video:
        raise ShapeError(
            f"input dims ({xa.shape[1]}, {xv.shape[1]}) != model "
            f"({model.d_audio}, {model.d_video})"
        )
    ba, cache_a = _tower_forward(model.encoder_audio, xa)
    bv, cache_v = _tower_forward(model.encoder_video, xv)
    bottleneck = np.concatenate([ba, bv], axis=1)
    logits, cache_h = _tower_forward(model.head, bottleneck)
    return logits, bottleneck, (cache_a, cache_v, cache_h)


def forward(
    model: FusionModel, x_audio: np.ndarray, x_video: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample forward pass; returns (logits, bottleneck)."""
    xa = np.asarray(x_audio, dtype=np.float64).reshape(1, -1)
    xv = np.asarray(x_video, dtype=np.float64).reshape(1, -1)
    logits, bottleneck, _ = _forward_batch(model, xa, xv)
    return logits[0], bottleneck[0]


def head_logits(model: FusionModel, bottleneck: np.ndarray) -> np.ndarray:
    """Apply only the fusion head to a (n, d) matrix of bottleneck rows."""
    b = np.atleast_2d(np.asarray(bottleneck, dtype=np.float64))
    if b.shape[1] != model.bottleneck_dim:
        raise ShapeError(f"bottleneck dim {b.shape[1]} != {model.bottleneck_dim}")
    out, _ = _tower_forward(model.head, b)
    return out


def encode_audio(model: FusionModel, x_audio: np.ndarray) -> np.ndarray:
    out, _ = _tower_forward(
        model.encoder_audio, np.asarray(x_audio, dtype=np.float64).reshape(1, -1)
    )
    return out[0]


def encode_video(model: FusionModel, x_video: np.ndarray) -> np.ndarray:
    out, _ = _tower_forward(
        model.encoder_video, np.asarray(x_video, dtype=np.float64).reshape(1, -1)
    )
    return out[0]


# ---------------------------------------------------------------------------
# losses


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _loss_batch(logits: np.ndarray, labels: np.ndarray, kind: str) -> np.ndarray:
    """Per-sample losses for a (n, K) logits matrix."""
    if kind == "softmax_ce":
        logz = np.log(np.sum(np.exp(logits - logits.max(axis=1, keepdims=True)), axis=1))
        logz += logits.max(axis=1)
        return logz - np.sum(labels * logits, axis=1)
    # mean per-class sigmoid BCE, numerically stable logit form
    z = logits
    per_class = np.maximum(z, 0.0) - z * labels + np.log1p(np.exp(-np.abs(z)))
    return per_class.mean(axis=1)


def _loss_grad_batch(logits: np.ndarray, labels: np.ndarray, kind: str) -> np.ndarray:
    if kind == "softmax_ce":
        return _softmax(logits) - labels
    return (_sigmoid(logits) - labels) / logits.shape[1]


def loss(model: FusionModel, logits: np.ndarray, label: np.ndarray) -> float:
    """Loss of one logits vector against one label vector.

    Softmax cross-entropy in single-label mode (soft targets allowed, so
    mixed labels work); mean per-class sigmoid BCE in multi-label mode.
    """
    lg = np.asarray(logits, dtype=np.float64).reshape(1, -1)
    lb = np.asarray(label, dtype=np.float64).reshape(1, -1)
    if lg.shape != lb.shape:
        raise ShapeError(f"logits length {lg.shape[1]} != label length {lb.shape[1]}")
    return float(_loss_batch(lg, lb, model.loss_kind)[0])


def predict_proba(model: FusionModel, logits: np.ndarray) -> np.ndarray:
    """Map logits to probabilities per the model's loss kind."""
    z = np.asarray(logits, dtype=np.float64)
    return _softmax(z) if model.loss_kind == "softmax_ce" else _sigmoid(z)


def predicted_labels(model: FusionModel, logits: np.ndarray) -> np.ndarray:
    """argmax class ids (single-label) or 0/1 membership matrix (multi-label)."""
    z = np.atleast_2d(np.asarray(logits, dtype=np.float64))
    if model.loss_kind == "softmax_ce":
        return np.argmax(z, axis=1)
    return (z >= 0.0).astype(np.int64)


# ---------------------------------------------------------------------------
# gradients


@dataclass
class ParamGrads:
    encoder_audio: list[tuple[np.ndarray, np.ndarray]]
    encoder_video: list[tuple[np.ndarray, np.ndarray]]
    head: list[tuple[np.ndarray, np.ndarray]]


def _grads_batch(
    model: FusionModel, xa: np.ndarray, xv: np.ndarray, y: np.ndarray
) -> tuple[float, ParamGrads, np.ndarray, np.ndarray]:
    """Mean loss over the batch plus parameter and input gradients of it."""
    n = xa.shape[0]
    logits, _, (cache_a, cache_v, cache_h) = _forward_batch(model, xa, xv)
    mean_loss = float(_loss_batch(logits, y, model.loss_kind).mean())
    dlogits = _loss_grad_batch(logits, y, model.loss_kind) / n
    dbottleneck, g_head = _tower_backward(model.head, cache_h, dlogits)
    da = model.encoder_audio[-1].dim_out
    dxa, g_audio = _tower_backward(model.encoder_audio, cache_a, dbottleneck[:, :da])
    dxv, g_video = _tower_backward(model.encoder_video, cache_v, dbottleneck[:, da:])
    return mean_loss, ParamGrads(g_audio, g_video, g_head), dxa, dxv


def grad_params(model: FusionModel, batch: Sequence[MultiModalSample]) -> ParamGrads:
    """Mean gradient of the loss over a batch, shaped like the parameters."""
    if len(batch) == 0:
        raise EmptyInputError("grad_params needs a non-empty batch")
    xa = np.stack([s.x_audio for s in batch])
    xv = np.stack([s.x_video for s in batch])
    y = np.stack([s.label for s in batch])
    _, grads, _, _ = _grads_batch(model, xa, xv, y)
    return grads


def grad_input(
    model: FusionModel, sample: MultiModalSample
) -> tuple[np.ndarray, np.ndarray]:
    """Gradient of the loss with respect to each raw input modality."""
    _, _, dxa, dxv = _grads_batch(
        model,
        sample.x_audio.reshape(1, -1),
        sample.x_video.reshape(1, -1),
        sample.label.reshape(1, -1),
    )
    return dxa[0], dxv[0]


def flatten_params(model: FusionModel) -> np.ndarray:
    parts = []
    for tower in (model.encoder_audio, model.encoder_video, model.head):
        for layer in tower:
            parts.append(layer.weight.ravel())
            parts.append(layer.bias.ravel())
    return np.concatenate(parts)


def set_params(model: FusionModel, flat: np.ndarray) -> FusionModel:
    out = model.copy()
    pos = 0
    for tower in (out.encoder_audio, out.encoder_video, out.head):
        for layer in tower:
            n = layer.weight.size
            layer.weight = flat[pos : pos + n].reshape(layer.weight.shape).copy()
            pos += n
            n = layer.bias.size
            layer.bias = flat[pos : pos + n].copy()
            pos += n
    if pos != flat.size:
        raise ShapeError(f"parameter vector length {flat.size}, model needs {pos}")
    return out


def flatten_grads(grads: ParamGrads) -> np.ndarray:
    parts = []
    for tower in (grads.encoder_audio, grads.encoder_video, grads.head):
        for dw, db in tower:
            parts.append(dw.ravel())
            parts.append(db.ravel())
    return np.concatenate(parts)


# ---------------------------------------------------------------------------
# training


def train(
    model: FusionModel,
    dataset: Dataset,
    config: TrainConfig,
    *,
    batch_transform: Callable[[int, np.ndarray, np.ndarray, np.ndarray], tuple] | None = None,
    epoch_callback: Callable[[FusionModel, int], None] | None = None,
) -> tuple[FusionModel, list[float]]:
    """Mini-batch SGD on a private copy; returns (model, per-epoch mean loss).

    Deterministic given config.seed: the shuffle stream is the only
    randomness here. batch_transform and epoch_callback are extension
    points for the training strategies (adversarial batches, mixup); they
    must bring their own random streams so that a no-op hook leaves the
    result bit-identical to plain training.
    """
    if len(dataset) == 0:
        raise EmptyInputError("cannot train on an empty dataset")
    model = model.copy()
    history: list[float] = []
    if config.epochs == 0:
        return model, history

    xa_all, xv_all, y_all = dataset.as_arrays()
    n = xa_all.shape[0]
    rng = np.random.default_rng(config.seed)
    use_momentum = config.optimizer == "sgd-momentum"
    velocity: list[list[tuple[np.ndarray, np.ndarray]]] = [
        [(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in tower]
        for tower in (model.encoder_audio, model.encoder_video, model.head)
    ]

    for epoch in range(config.epochs):
        if epoch_callback is not None:
            epoch_callback(model, epoch)
        perm = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start : start + config.batch_size]
            xa, xv, y = xa_all[idx], xv_all[idx], y_all[idx]
            if batch_transform is not None:
                xa, xv, y = batch_transform(epoch, xa, xv, y)
            mean_loss, grads, _, _ = _grads_batch(model, xa, xv, y)
            batch_losses.append(mean_loss)
            towers = (model.encoder_audio, model.encoder_video, model.head)
            tower_grads = (grads.encoder_audio, grads.encoder_video, grads.head)
            for t, (tower, tg) in enumerate(zip(towers, tower_grads)):
                for i, (layer, (dw, db)) in enumerate(zip(tower, tg)):
                    if use_momentum:
                        vw, vb = velocity[t][i]
                        vw = config.momentum * vw + dw
                        vb = config.momentum * vb + db
                        velocity[t][i] = (vw, vb)
                        dw, db = vw, vb
                    layer.weight = layer.weight - config.learning_rate * dw
                    layer.bias = layer.bias - config.learning_rate * db
        history.append(float(np.mean(batch_losses)))
    return model, history


def extract_bottleneck(
    model: FusionModel, dataset: Dataset
) -> tuple[np.ndarray, np.ndarray]:
    """Bottleneck matrix (n, d) and label matrix (n, K), order preserved."""
    xa, xv, y = dataset.as_arrays()
    if xa.shape[0] == 0:
        return np.zeros((0, model.bottleneck_dim)), y
    _, bottleneck, _ = _forward_batch(model, xa, xv)
    return bottleneck, y


def train_accuracy(model: FusionModel, dataset: Dataset) -> float:
    xa, xv, y = dataset.as_arrays()
    logits, _, _ = _forward_batch(model, xa, xv)
    pred = predicted_labels(model, logits)
    if model.loss_kind == "softmax_ce":
        return float(np.mean(pred == np.argmax(y, axis=1)))
    return float(np.mean(pred == (y >= 0.5).astype(np.int64)))


# ---------------------------------------------------------------------------
# checkpoint I/O: versioned header, then raw little-endian float64 payload


def save_model(model: FusionModel, path) -> None:
    meta = {
        "activation": model.activation,
        "loss_kind": model.loss_kind,
        "towers": {
            name: [
                {"in": l.dim_in, "out": l.dim_out, "activation": l.activation}
                for l in tower
            ]
            for name, tower in (
                ("encoder_audio", model.encoder_audio),
                ("encoder_video", model.encoder_video),
                ("head", model.head),
            )
        },
    }
    header = json.dumps(meta, sort_keys=True).encode("utf-8")
    payload = flatten_params(model).astype("<f8").tobytes()
    with open(path, "wb") as fh:
        fh.write(_CHECKPOINT_MAGIC)
        fh.write(struct.pack("<II", _CHECKPOINT_VERSION, len(header)))
        fh.write(header)
        fh.write(payload)


def load_model(path) -> FusionModel:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != _CHECKPOINT_MAGIC:
        raise FormatError(f"bad checkpoint magic {blob[:4]!r}")
    if len(blob) < 12:
        raise FormatError(f"checkpoint truncated in header at byte {len(blob)}")
    version, header_len = struct.unpack("<II", blob[4:12])
    if version != _CHECKPOINT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    if len(blob) < 12 + header_len:
        raise FormatError(f"checkpoint truncated in metadata at byte {len(blob)}")
    meta = json.loads(blob[12 : 12 + header_len].decode("utf-8"))

    def tower(name: str) -> list[Affine]:
        return [
            Affine(np.zeros((spec["out"], spec["in"])), np.zeros(spec["out"]), spec["activation"])
            for spec in meta["towers"][name]
        ]

    model = FusionModel(
        tower("encoder_audio"),
        tower("encoder_video"),
        tower("head"),
        activation=meta["activation"],
        loss_kind=meta["loss_kind"],
    )
    expected = flatten_params(model).size
    payload = blob[12 + header_len :]
    if len(payload) != expected * 8:
        raise FormatError(
            f"checkpoint payload is {len(payload)} bytes at offset {12 + header_len}, "
            f"expected {expected * 8}"
        )
    flat = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    return set_params(model, flat)
