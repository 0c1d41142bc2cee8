"""Windowed per-channel EEG statistics at 100 frames/s."""
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import (
    InvalidConfigError,
    RecordingTooShortError,
    ShapeError,
    WindowTooShortError,
)

FEATURE_KINDS = ("eeg_set1", "eeg_set2", "eeg_set3", "mfcc", "reduced")


@dataclass(frozen=True)
class FeatureSequence:
    """Time-major ``[frames x dim]`` feature matrix with its frame rate."""

    data: np.ndarray
    frame_rate: float
    kind: str

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or data.shape[0] < 1 or data.shape[1] < 1:
            raise ShapeError(f"feature data must be [frames>=1 x dim>=1], got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise ValueError("feature data contains non-finite values")
        if self.kind not in FEATURE_KINDS:
            raise ValueError(f"unknown feature kind {self.kind!r}")
        object.__setattr__(self, "data", data)

    @property
    def dim(self):
        return self.data.shape[1]

    @property
    def n_frames(self):
        return self.data.shape[0]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.data.astype("<f4").tofile(directory / "features.f32")
        meta = {"kind": self.kind, "dim": self.dim, "frame_rate_hz": self.frame_rate}
        (directory / "features.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory):
        directory = Path(directory)
        meta = json.loads((directory / "features.json").read_text())
        data = np.fromfile(directory / "features.f32", dtype="<f4")
        if data.size % meta["dim"]:
            raise ShapeError(f"{directory}: {data.size} floats is not a multiple of dim {meta['dim']}")
        return cls(data.reshape(-1, meta["dim"]).astype(np.float32), meta["frame_rate_hz"], meta["kind"])


CHANNEL_FEATURES = ("rms", "zero_crossings", "window_mean", "kurtosis", "spectral_entropy", "diff_rms")


@dataclass(frozen=True)
class FeaturePreset:
    name: str
    per_channel_features: tuple = field(default_factory=tuple)
    window_ms: float = 50.0
    hop_ms: float = 10.0
    kind: str = "reduced"

    def __post_init__(self):
        unknown = set(self.per_channel_features) - set(CHANNEL_FEATURES)
        if unknown or not self.per_channel_features:
            raise InvalidConfigError(f"preset {self.name!r}: bad feature list {self.per_channel_features}")
        if self.hop_ms <= 0 or self.window_ms < self.hop_ms:
            raise InvalidConfigError(f"preset {self.name!r}: need window_ms >= hop_ms > 0")

    @property
    def frame_rate(self):
        return 1000.0 / self.hop_ms

    def output_dim(self, n_channels):
        return n_channels * len(self.per_channel_features)


_SET1 = ("rms", "zero_crossings", "window_mean", "kurtosis", "spectral_entropy")

# The three feature sets are placeholders chosen to hit the published
# dimensions for 31 channels (155 -> 30, 186 -> 50, 93 kept as is).
PRESETS = {
    "set1": FeaturePreset("set1", _SET1, kind="eeg_set1"),
    "set2": FeaturePreset("set2", _SET1 + ("diff_rms",), kind="eeg_set2"),
    "set3": FeaturePreset("set3", ("rms", "window_mean", "spectral_entropy"), kind="eeg_set3"),
}


def get_preset(name, **overrides):
    if isinstance(name, FeaturePreset):
        base = name
    elif name in PRESETS:
        base = PRESETS[name]
    else:
        raise InvalidConfigError(f"unknown feature preset {name!r}; known: {sorted(PRESETS)}")
    if not overrides:
        return base
    fields = {"name": base.name, "per_channel_features": base.per_channel_features,
              "window_ms": base.window_ms, "hop_ms": base.hop_ms, "kind": base.kind}
    fields.update(overrides)
    fields["per_channel_features"] = tuple(fields["per_channel_features"])
    return FeaturePreset(**fields)


def _window_stats(w, features):
    """Feature values along the last axis of ``w``; returns ``[..., len(features)]``."""
    out = []
    mean = None
    for name in features:
        if name == "rms":
            out.append(np.sqrt(np.mean(w * w, axis=-1)))
        elif name == "zero_crossings":
            s = np.sign(w)
            out.append(np.count_nonzero(s[..., 1:] * s[..., :-1] < 0, axis=-1).astype(np.float64))
        elif name == "window_mean":
            mean = w.mean(axis=-1) if mean is None else mean
            out.append(mean)
        elif name == "kurtosis":
            mean = w.mean(axis=-1) if mean is None else mean
            d = w - mean[..., None]
            m2 = np.mean(d * d, axis=-1)
            m4 = np.mean(d ** 4, axis=-1)
            # a flat window has no defined kurtosis; report 0 to keep features finite
            tiny = m2 <= 1e-300
            out.append(np.where(tiny, 0.0, m4 / np.where(tiny, 1.0, m2 * m2)))
        elif name == "spectral_entropy":
            p = np.abs(np.fft.rfft(w, axis=-1)) ** 2
            n_bins = p.shape[-1]
            total = p.sum(axis=-1, keepdims=True)
            p = p / np.where(total > 0, total, 1.0)
            with np.errstate(divide="ignore", invalid="ignore"):
                h = -np.sum(np.where(p > 0, p * np.log(p), 0.0), axis=-1)
            out.append(h / np.log(n_bins) if n_bins > 1 else np.zeros_like(h))
        elif name == "diff_rms":
            d = np.diff(w, axis=-1)
            out.append(np.sqrt(np.mean(d * d, axis=-1)))
        else:
            raise InvalidConfigError(f"unknown channel feature {name!r}")
    return np.stack(out, axis=-1)


def channel_window_features(window, features=_SET1):
    """Statistics of one single-channel window, in the order of ``features``.

    rms, count of strict sign changes, mean, Pearson kurtosis ``m4 / m2**2``
    (3 for a Gaussian), and spectral entropy of the one-sided power spectrum
    normalised by ``log(n_bins)`` so it lies in [0, 1].
    """
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 1 or window.size < 2:
        raise WindowTooShortError("window needs at least 2 samples")
    return _window_stats(window, tuple(features))


def extract_features(eeg, preset="set1", eeg_rate=1000.0):
    """Slide a window over every channel and concatenate the stats channel-major.

    ``eeg`` is ``[channels x samples]``. The result has
    ``1 + (samples - window) // hop`` frames and ``channels * n_features``
    columns ordered ``ch0_f0, ch0_f1, ..., ch1_f0, ...``.
    """
    preset = get_preset(preset)
    eeg = np.asarray(eeg, dtype=np.float64)
    if eeg.ndim != 2:
        raise ShapeError("eeg must be [channels x samples]")
    win = int(round(preset.window_ms * eeg_rate / 1000.0))
    hop = int(round(preset.hop_ms * eeg_rate / 1000.0))
    if win < 2:
        raise WindowTooShortError(f"window of {win} samples is too short")
    n_ch, n_samp = eeg.shape
    if n_samp < win:
        raise RecordingTooShortError(f"{n_samp} samples is shorter than one {win}-sample window")
    frames = np.lib.stride_tricks.sliding_window_view(eeg, win, axis=1)[:, ::hop]
    stats = _window_stats(frames, preset.per_channel_features)  # [ch, frames, feat]
    data = stats.transpose(1, 0, 2).reshape(stats.shape[1], -1)
    return FeatureSequence(data, eeg_rate / hop, preset.kind)


class EEGFeatureExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping a list of ``[channels x samples]`` EEG
    arrays to a list of ``[frames x dim]`` feature matrices."""

    def __init__(self, preset="set1", window_ms=50.0, hop_ms=10.0, eeg_rate=1000.0):
        self.preset = preset
        self.window_ms = window_ms
        self.hop_ms = hop_ms
        self.eeg_rate = eeg_rate

    def fit(self, X, y=None):
        self.preset_ = get_preset(self.preset, window_ms=self.window_ms, hop_ms=self.hop_ms)
        return self

    def transform(self, X):
        preset = getattr(self, "preset_", None) or get_preset(
            self.preset, window_ms=self.window_ms, hop_ms=self.hop_ms)
        return [extract_features(x, preset, self.eeg_rate).data for x in X]
