"""Pipeline configuration: JSON file deep-merged over defaults."""
import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .exceptions import InvalidConfigError

FEATURE_SETS = ("set1", "set2", "set3")
# reduced dimension per feature set; None keeps the original dimension
DEFAULT_TARGET_DIMS = {"set1": 30, "set2": 50, "set3": None}

DEFAULTS = {
    "data_dir": "data",
    "output_dir": "output",
    "subjects": None,
    "condition": None,
    "feature_set": "set1",
    "seed": 0,
    "jobs": 1,
    "generate": {
        "n_channels": 31,
        "n_recordings": 160,
        "duration_s": 2.0,
        "snr_db": 20.0,
        "eeg_scale_uv": 10.0,
        "line_noise_uv": 0.0,
        "control_max_hz": 1.0,
        "subject": "synth",
        "condition": "spoken",
    },
    "prepare": {
        "steps": ["bandpass", "notch", "ica"],
        "bandpass": {"order": 4, "low_hz": 0.1, "high_hz": 70.0},
        "notch": {"freq_hz": 60.0, "q": 30.0},
        "zero_phase": False,
        "ica": {"enabled": False, "n_components": None, "reject": [], "max_iter": 200, "tol": 1e-4},
    },
    "features": {"window_ms": 50.0, "hop_ms": 10.0, "presets": {}},
    "split": {"ratios": [0.8, 0.1, 0.1], "stratify": False},
    "kpca": {
        "kernel": "rbf",
        "gamma": None,
        "target_dim": None,
        "bypass": None,
        "standardize": True,
        "max_fit_samples": 2000,
    },
    "mfcc": {},
    "train": {
        "epochs": 250,
        "batch_size": 100,
        "learning_rate": 0.01,
        "beta_1": 0.9,
        "beta_2": 0.999,
        "epsilon": 1e-7,
        "dropout": 0.2,
        "hidden_sizes": [256, 128],
        "standardize_targets": False,
    },
    "synth": {"griffin_lim_iterations": 60, "peak": 0.9},
    "eval": {"mcd_normalization": "zscore", "include_c0": False},
}


def deep_merge(base, override):
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _unknown_keys(base, override, prefix=""):
    bad = []
    for k, v in override.items():
        if k not in base:
            bad.append(prefix + k)
        elif isinstance(v, dict) and isinstance(base[k], dict) and base[k]:
            bad.extend(_unknown_keys(base[k], v, f"{prefix}{k}."))
    return bad


@dataclass
class PipelineConfig:
    values: dict = field(default_factory=lambda: copy.deepcopy(DEFAULTS))

    def __getitem__(self, key):
        return self.values[key]

    @property
    def data_dir(self):
        return Path(self.values["data_dir"])

    @property
    def output_dir(self):
        return Path(self.values["output_dir"])

    @property
    def feature_set(self):
        return self.values["feature_set"]

    def target_dim(self):
        """KPCA output dimension for the active feature set, or None for a bypass."""
        k = self.values["kpca"]
        if k["bypass"] is True:
            return None
        if k["target_dim"] is not None:
            return int(k["target_dim"])
        if k["bypass"] is False:
            raise InvalidConfigError("kpca.bypass is false but no kpca.target_dim given")
        return DEFAULT_TARGET_DIMS[self.feature_set]

    def digest(self):
        """Hash of everything that affects results; locations and worker count are left out."""
        values = {k: v for k, v in self.values.items() if k not in ("data_dir", "output_dir", "jobs")}
        text = json.dumps(values, sort_keys=True, default=str)
        return hashlib.sha256(text.encode()).hexdigest()[:16]

    def validate(self):
        v = self.values
        if v["feature_set"] not in FEATURE_SETS:
            raise InvalidConfigError(f"feature_set must be one of {FEATURE_SETS}")
        if v["condition"] not in (None, "listen", "spoken"):
            raise InvalidConfigError("condition must be listen, spoken or null")
        if int(v["jobs"]) < 1:
            raise InvalidConfigError("jobs must be >= 1")
        unknown = set(v["prepare"]["steps"]) - {"bandpass", "notch", "ica"}
        if unknown:
            raise InvalidConfigError(f"unknown prepare steps {sorted(unknown)}")
        ratios = v["split"]["ratios"]
        if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9:
            raise InvalidConfigError("split.ratios must be three shares summing to 1")
        if v["eval"]["mcd_normalization"] not in (None, "zscore", "minmax"):
            raise InvalidConfigError("eval.mcd_normalization must be zscore, minmax or null")
        self.target_dim()
        return self


def load_config(path=None, overrides=None):
    """Merge the JSON file at ``path`` and then ``overrides`` over the defaults."""
    values = copy.deepcopy(DEFAULTS)
    for layer in ((_read_json(path) if path else {}), overrides or {}):
        bad = _unknown_keys(DEFAULTS, layer)
        if bad:
            raise InvalidConfigError(f"unknown config keys: {', '.join(sorted(bad))}")
        values = deep_merge(values, layer)
    return PipelineConfig(values).validate()


def _read_json(path):
    try:
        data = json.loads(Path(path).read_text())
    except FileNotFoundError as exc:
        raise InvalidConfigError(f"config file {path} not found") from exc
    except json.JSONDecodeError as exc:
        raise InvalidConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise InvalidConfigError("config root must be a JSON object")
    return data
