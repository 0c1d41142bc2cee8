"""MCD, RMSE and range-normalized RMSE, plus per-subject report assembly."""
import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from .eeg_features import FeatureSequence
from .exceptions import AlignmentError, DegenerateRangeError, NoDataError, ShapeError

MCD_SCALE = 10.0 / np.log(10.0)


def _as_array(x):
    return np.asarray(x.data if isinstance(x, FeatureSequence) else x, dtype=np.float64)


@dataclass(frozen=True)
class NormStats:
    """Per-coefficient affine normalisation ``(x - offset) / scale``."""

    offset: np.ndarray
    scale: np.ndarray

    def apply(self, x):
        return (x - self.offset) / self.scale


def _fsum_mean(a):
    # correctly rounded, hence independent of row order
    return np.array([math.fsum(col) / len(col) for col in a.T])


def normalization_stats(targets, method="zscore"):
    """Statistics from ground-truth frames, pooled over all given sequences."""
    frames = np.concatenate([_as_array(t) for t in targets])
    if method == "zscore":
        offset = _fsum_mean(frames)
        scale = np.sqrt(_fsum_mean((frames - offset) ** 2))
    elif method == "minmax":
        offset = frames.min(axis=0)
        scale = frames.max(axis=0) - offset
    else:
        raise ValueError(f"unknown normalization {method!r}")
    return NormStats(offset, np.where(scale > 0, scale, 1.0))


def mcd(pred, target, norm=None, include_c0=False):
    """Mel cepstral distortion in dB between frame-aligned cepstral sequences.

    ``(10 / ln 10) * mean_t sqrt(2 * sum_i (c_i - c_hat_i)**2)`` over
    coefficients 1.. (or 0.. with ``include_c0``). ``norm`` (see
    :func:`normalization_stats`) is applied to both sequences first.
    """
    p, t = _as_array(pred), _as_array(target)
    if p.shape[0] != t.shape[0]:
        raise AlignmentError(f"frame counts differ: {p.shape[0]} vs {t.shape[0]}")
    if p.shape != t.shape:
        raise ShapeError(f"shapes differ: {p.shape} vs {t.shape}")
    if norm is not None:
        p, t = norm.apply(p), norm.apply(t)
    start = 0 if include_c0 else 1
    d = p[:, start:] - t[:, start:]
    return float(MCD_SCALE * np.mean(np.sqrt(2.0 * np.sum(d * d, axis=1))))


def rmse(pred, target):
    p, t = _as_array(pred), _as_array(target)
    if p.shape != t.shape:
        raise ShapeError(f"shapes differ: {p.shape} vs {t.shape}")
    return float(np.sqrt(np.mean((p - t) ** 2)))


def normalized_rmse(pred, target, value_range=None):
    """RMSE divided by ``max(target) - min(target)``, or by ``value_range`` when given."""
    if value_range is None:
        t = _as_array(target)
        value_range = float(t.max() - t.min())
    if not value_range > 0:
        raise DegenerateRangeError("target has zero range")
    return rmse(pred, target) / value_range


@dataclass
class ReportRow:
    subject: str
    condition: str
    feature_set: str
    avg_mcd: float
    avg_rmse: float
    avg_nrmse: float
    n_utterances: int


@dataclass
class EvaluationReport:
    rows: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    COLUMNS = ("subject", "condition", "feature_set", "avg_mcd", "avg_rmse", "avg_nrmse", "n_utterances")

    def sorted(self):
        return EvaluationReport(sorted(self.rows, key=lambda r: (r.subject, r.condition, r.feature_set)),
                                dict(self.metadata))

    def to_csv(self, path=None):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for k in sorted(self.metadata):
            w.writerow([f"# {k}", self.metadata[k]])
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow([r.subject, r.condition, r.feature_set, repr(r.avg_mcd), repr(r.avg_rmse),
                        repr(r.avg_nrmse), r.n_utterances])
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def format_table(self):
        """One table per (subject, condition), columns as in the published tables."""
        out = []
        groups = {}
        for r in self.rows:
            groups.setdefault((r.subject, r.condition), []).append(r)
        for (subject, condition), rows in groups.items():
            out.append(f"Results for predicting {condition} MFCC from {condition} EEG for subject {subject}")
            out.append(f"{'EEG Feature Set':<16}| {'Average MCD':>12} | {'Average RMSE':>12} | "
                       f"{'Average Normalized RMSE':>24}")
            for r in rows:
                out.append(f"{r.feature_set:<16}| {r.avg_mcd:>12.4f} | {r.avg_rmse:>12.4f} | {r.avg_nrmse:>24.4f}")
            out.append("")
        return "\n".join(out)


def utterance_metrics(pred, target, norm=None, value_range=None, include_c0=False):
    return (mcd(pred, target, norm, include_c0), rmse(pred, target),
            normalized_rmse(pred, target, value_range))


def evaluate(model, test_items, feature_set, mcd_normalization="zscore", include_c0=False, metadata=None):
    """Average the three metrics per (subject, condition) over the test utterances.

    ``test_items`` is a sequence of ``(subject, condition, features, target)``.
    ``model`` needs a ``predict(list_of_sequences)`` method. MCD normalisation
    statistics and the NRMSE range are taken from the ground-truth test
    targets (pooled per subject and condition).
    """
    items = list(test_items)
    if not items:
        raise NoDataError("empty test split")
    preds = model.predict([it[2] for it in items])
    groups = {}
    for (subject, condition, _, target), pred in zip(items, preds):
        groups.setdefault((subject, condition), []).append((pred, _as_array(target)))

    rows = []
    for (subject, condition), pairs in sorted(groups.items()):
        targets = [t for _, t in pairs]
        norm = normalization_stats(targets, mcd_normalization) if mcd_normalization else None
        allt = np.concatenate(targets)
        value_range = float(allt.max() - allt.min())
        vals = np.array([utterance_metrics(p, t, norm, value_range, include_c0) for p, t in pairs])
        m = _fsum_mean(vals)
        rows.append(ReportRow(subject, condition, feature_set, float(m[0]), float(m[1]), float(m[2]), len(pairs)))
    return EvaluationReport(rows, dict(metadata or {})).sorted()
