"""Two-layer GRU sequence regressor: GRU -> dropout -> GRU -> dropout -> dense.

The network maps an input feature sequence ``[T, D]`` to an output sequence
``[T, n_outputs]`` one frame at a time. Batches of unequal-length sequences
are right-padded and masked.
"""
import csv
import logging
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .. import _binio
from ..eeg_features import FeatureSequence
from ..exceptions import EmptyLossError, NoDataError, ShapeError
from .gru import PARAM_NAMES, GruLayerParams, gru_layer_backward, gru_layer_forward
from .optim import AdamState, adam_step

logger = logging.getLogger(__name__)

_MAGIC = b"GRUR"
_VERSION = 1


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 250
    batch_size: int = 100
    learning_rate: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.batch_size < 1 or self.learning_rate < 0:
            raise ValueError(f"invalid training config {self}")


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss"])
            for i, tr in enumerate(self.train_loss):
                val = self.val_loss[i] if i < len(self.val_loss) else float("nan")
                w.writerow([i + 1, repr(float(tr)), repr(float(val))])


# --------------------------------------------------------------------------
# functional core


def layer_params(params, prefix):
    return GruLayerParams(*(params[f"{prefix}.{n}"] for n in PARAM_NAMES))


def init_params(input_dim, hidden_sizes, n_outputs, rng, dtype=np.float32):
    params = {}
    inp = input_dim
    for i, hidden in enumerate(hidden_sizes):
        layer = GruLayerParams.initialize(inp, hidden, rng, dtype)
        params.update({f"gru{i}.{k}": v for k, v in layer.arrays().items()})
        inp = hidden
    limit = np.sqrt(6.0 / (inp + n_outputs))
    params["dense.W"] = rng.uniform(-limit, limit, size=(n_outputs, inp)).astype(dtype)
    params["dense.b"] = np.zeros(n_outputs, dtype)
    return params


def n_gru_layers(params):
    return sum(1 for k in params if k.endswith(".W_z"))


def dropout_masks(rng, T, B, hidden_sizes, rate, dtype):
    """Inverted-dropout masks, one per GRU output, scaled by ``1 / (1 - rate)``."""
    if rate <= 0:
        return None
    keep = 1.0 - rate
    return [(rng.random((T, B, h)) < keep).astype(dtype) / dtype(keep) for h in hidden_sizes]


def forward(params, x, masks=None):
    """``x [T, B, D] -> y [T, B, n_out]``; ``masks`` enables train-mode dropout."""
    caches = []
    h = x
    for i in range(n_gru_layers(params)):
        hs, cache = gru_layer_forward(h, layer_params(params, f"gru{i}"))
        caches.append(cache)
        h = hs * masks[i] if masks is not None else hs
    W, b = params["dense.W"], params["dense.b"]
    T, B, H = h.shape
    y = (h.reshape(T * B, H) @ W.T + b).reshape(T, B, -1)
    return y, (caches, h, masks)


def backward(params, cache, dy):
    """Exact gradients of a scalar loss given ``dy = dL/dy`` of :func:`forward`."""
    caches, h_top, masks = cache
    T, B, H = h_top.shape
    W = params["dense.W"]
    flat_dy = dy.reshape(T * B, -1)
    grads = {"dense.W": flat_dy.T @ h_top.reshape(T * B, H), "dense.b": flat_dy.sum(axis=0)}
    dh = (flat_dy @ W).reshape(T, B, H)
    for i in range(len(caches) - 1, -1, -1):
        if masks is not None:
            dh = dh * masks[i]
        g, dh = gru_layer_backward(dh, layer_params(params, f"gru{i}"), caches[i])
        grads.update({f"gru{i}.{k}": v for k, v in g.items()})
    return grads


def mse_loss(pred, target, mask=None):
    """Mean squared error over unmasked frames and all output dims.

    ``pred`` and ``target`` are ``[T, B, n]`` (or ``[T, n]``); ``mask`` marks
    valid frames with shape ``[T, B]`` (or ``[T]``). Returns
    ``(loss, dloss/dpred)``.
    """
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ShapeError(f"pred {pred.shape} != target {target.shape}")
    if mask is None:
        mask = np.ones(pred.shape[:-1], dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum()) * pred.shape[-1]
    if count == 0:
        raise EmptyLossError("every frame is masked")
    diff = (pred - target) * mask[..., None]
    loss = float(np.sum(diff.astype(np.float64) ** 2) / count)
    return loss, (2.0 / count) * diff


def pad_batch(seqs, dtype):
    """Right-pad ``[T_i, D]`` arrays into ``[T_max, B, D]`` plus a ``[T_max, B]`` mask."""
    T = max(len(s) for s in seqs)
    out = np.zeros((T, len(seqs), seqs[0].shape[1]), dtype=dtype)
    mask = np.zeros((T, len(seqs)), dtype=bool)
    for j, s in enumerate(seqs):
        out[: len(s), j] = s
        mask[: len(s), j] = True
    return out, mask


# --------------------------------------------------------------------------
# estimator


class GRURegressor(BaseEstimator):
    """Frame-wise sequence regressor.

    ``fit`` and ``predict`` take lists of ``[T_i, D]`` arrays (or
    :class:`FeatureSequence`), one per utterance; targets are lists of
    ``[T_i, n_outputs]`` arrays with matching lengths.
    """

    def __init__(self, hidden_sizes=(256, 128), dropout=0.2, epochs=250, batch_size=100,
                 learning_rate=0.01, beta_1=0.9, beta_2=0.999, epsilon=1e-7,
                 standardize_targets=False, dtype="float32", random_state=0):
        self.hidden_sizes = hidden_sizes
        self.dropout = dropout
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta_1 = beta_1
        self.beta_2 = beta_2
        self.epsilon = epsilon
        self.standardize_targets = standardize_targets
        self.dtype = dtype
        self.random_state = random_state

    @property
    def train_config(self):
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.beta_1,
                           self.beta_2, self.epsilon, self.random_state)

    def _seqs(self, X):
        dt = np.dtype(self.dtype)
        return [np.asarray(x.data if isinstance(x, FeatureSequence) else x, dtype=dt) for x in X]

    def initialize(self, input_dim, n_outputs):
        """Draw fresh parameters from ``random_state``."""
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        rng = np.random.default_rng(self.random_state)
        self.params_ = init_params(input_dim, tuple(self.hidden_sizes), n_outputs, rng, np.dtype(self.dtype))
        self.n_features_in_ = input_dim
        self.n_outputs_ = n_outputs
        self.y_mean_ = np.zeros(n_outputs)
        self.y_scale_ = np.ones(n_outputs)
        return self

    def _check_input(self, seqs):
        for s in seqs:
            if s.ndim != 2 or s.shape[1] != self.n_features_in_:
                raise ShapeError(f"input sequence shape {s.shape} does not match input_dim {self.n_features_in_}")

    def _batch_loss(self, xs, ys):
        xb, mask = pad_batch(xs, np.dtype(self.dtype))
        yb, _ = pad_batch(ys, np.dtype(self.dtype))
        pred, _ = forward(self.params_, xb)
        return mse_loss(pred, yb, mask)[0], int(mask.sum())

    def fit(self, X, y, X_val=None, y_val=None):
        """Train for ``epochs`` full passes with Adam on masked MSE.

        Each epoch shuffles the utterances (seeded), slices batches of
        ``batch_size``, runs a dropout forward/backward pass and one Adam
        step per batch, then records the mean batch loss and, when given,
        the validation loss in eval mode. The final-epoch parameters are kept.
        """
        xs = self._seqs(X)
        ys = self._seqs(y)
        if not xs:
            raise NoDataError("empty training set")
        if len(xs) != len(ys):
            raise ShapeError("X and y hold different numbers of sequences")
        for a, b in zip(xs, ys):
            if len(a) != len(b):
                raise ShapeError(f"input/target length mismatch {len(a)} vs {len(b)}")
        self.initialize(xs[0].shape[1], ys[0].shape[1])
        self._check_input(xs)

        if self.standardize_targets:
            allY = np.concatenate(ys).astype(np.float64)
            self.y_mean_ = allY.mean(axis=0)
            std = allY.std(axis=0)
            self.y_scale_ = np.where(std > 0, std, 1.0)
        dt = np.dtype(self.dtype)
        ys = [((t - self.y_mean_) / self.y_scale_).astype(dt) for t in ys]
        val = None
        if X_val is not None and len(X_val):
            vx = self._seqs(X_val)
            vy = [((t - self.y_mean_) / self.y_scale_).astype(dt) for t in self._seqs(y_val)]
            val = (vx, vy)

        cfg = self.train_config
        rng = np.random.default_rng([cfg.seed, 1])
        state = AdamState.like(self.params_)
        self.history_ = TrainingHistory()
        n = len(xs)
        for epoch in range(cfg.epochs):
            order = rng.permutation(n)
            losses = []
            for start in range(0, n, cfg.batch_size):
                idx = order[start: start + cfg.batch_size]
                xb, mask = pad_batch([xs[i] for i in idx], dt)
                yb, _ = pad_batch([ys[i] for i in idx], dt)
                masks = dropout_masks(rng, xb.shape[0], xb.shape[1], self.hidden_sizes, self.dropout, dt.type)
                pred, cache = forward(self.params_, xb, masks)
                loss, dpred = mse_loss(pred, yb, mask)
                grads = backward(self.params_, cache, dpred.astype(dt))
                adam_step(self.params_, grads, state, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.epsilon)
                losses.append(loss)
            self.history_.train_loss.append(float(np.mean(losses)))
            if val is not None:
                self.history_.val_loss.append(self._pooled_loss(*val))
            logger.debug("epoch %d train %.6g val %s", epoch + 1, self.history_.train_loss[-1],
                         self.history_.val_loss[-1] if val is not None else "-")
        return self

    def _pooled_loss(self, xs, ys):
        total, count = 0.0, 0
        for start in range(0, len(xs), self.batch_size):
            loss, frames = self._batch_loss(xs[start: start + self.batch_size], ys[start: start + self.batch_size])
            total += loss * frames
            count += frames
        return total / count

    def predict(self, X, mode="eval", seed=None):
        """Per-frame outputs for every sequence; ``mode="train"`` applies seeded dropout."""
        check_is_fitted(self, "params_")
        xs = self._seqs(X)
        self._check_input(xs)
        dt = np.dtype(self.dtype)
        out = []
        rng = np.random.default_rng(seed) if mode == "train" else None
        for start in range(0, len(xs), self.batch_size):
            chunk = xs[start: start + self.batch_size]
            xb, _ = pad_batch(chunk, dt)
            masks = (dropout_masks(rng, xb.shape[0], xb.shape[1], self.hidden_sizes, self.dropout, dt.type)
                     if mode == "train" else None)
            pred, _ = forward(self.params_, xb, masks)
            for j, s in enumerate(chunk):
                out.append(pred[: len(s), j].astype(np.float64) * self.y_scale_ + self.y_mean_)
        return out

    def save(self, path):
        check_is_fitted(self, "params_")
        params = self.get_params()
        params["hidden_sizes"] = list(params["hidden_sizes"])
        meta = {"input_dim": self.n_features_in_, "n_outputs": self.n_outputs_, "params": params}
        arrays = {k: v.astype(np.float32) for k, v in self.params_.items()}
        arrays["y_mean"] = self.y_mean_.astype(np.float32)
        arrays["y_scale"] = self.y_scale_.astype(np.float32)
        _binio.save_arrays(path, _MAGIC, _VERSION, meta, arrays)

    @classmethod
    def load(cls, path):
        _, meta, arrays = _binio.load_arrays(path, _MAGIC)
        params = dict(meta["params"])
        params["hidden_sizes"] = tuple(params["hidden_sizes"])
        model = cls(**params)
        dt = np.dtype(model.dtype)
        model.n_features_in_ = meta["input_dim"]
        model.n_outputs_ = meta["n_outputs"]
        model.y_mean_ = arrays.pop("y_mean").astype(np.float64)
        model.y_scale_ = arrays.pop("y_scale").astype(np.float64)
        model.params_ = {k: v.astype(dt) for k, v in arrays.items()}
        return model


def model_forward(x, model, mode="eval", seed=None):
    """Single-sequence forward pass returning a :class:`FeatureSequence` of MFCCs."""
    data = x.data if isinstance(x, FeatureSequence) else np.asarray(x)
    rate = x.frame_rate if isinstance(x, FeatureSequence) else 100.0
    pred = model.predict([data], mode=mode, seed=seed)[0]
    return FeatureSequence(pred, rate, "mfcc")
