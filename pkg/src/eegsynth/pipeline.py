"""File-based pipeline stages.

Layout under ``output_dir``::

    split.json
    features/<set>/<rec>/features.{f32,json}
    mfcc/<rec>/features.{f32,json}
    reduced/<set>/<rec>/features.{f32,json}
    models/kpca_<set>_<subject>_<condition>.bin
    models/gru_<set>_<subject>_<condition>.ckpt (+ _history.csv)
    synth/<set>/<rec>.wav (+ _convergence.csv)
    reports/report_<set>.csv

``prepare`` writes ``cleaned_eeg.f32`` and ``cleaned_provenance.json`` into
each bundle directory, next to the original files.
"""
import csv
import hashlib
import json
import logging
import shutil
import zlib
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import dsp
from .acoustic import MfccConfig, griffin_lim, invert_mfcc, mfcc
from .dataset import (
    DatasetSplit,
    SyntheticTaskSpec,
    generate_synthetic_session,
    list_bundles,
    load_recording_bundle,
    split_dataset,
    write_wav,
)
from .eeg_features import FeatureSequence, extract_features, get_preset
from .exceptions import EEGSynthError, InvalidConfigError, NoDataError, StageOrderError
from .kpca import KernelPCA
from .metrics import EvaluationReport, evaluate
from .nn import GRURegressor

logger = logging.getLogger(__name__)

CLEANED_EEG = "cleaned_eeg.f32"
PROVENANCE = "cleaned_provenance.json"


def _map(fn, items, jobs):
    """Apply ``fn`` to every item; returns ``[(item, error_or_None)]`` in input order."""
    def safe(item):
        try:
            fn(item)
            return item, None
        except EEGSynthError as exc:
            return item, exc
    if jobs <= 1:
        return [safe(i) for i in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(safe, items))


def _report_failures(results, stage):
    failed = [(item, err) for item, err in results if err is not None]
    for item, err in failed:
        logger.error("%s failed for %s: %s", stage, getattr(item, "name", item), err)
    return 1 if failed else 0


def _require(path):
    path = Path(path)
    if not path.exists():
        raise StageOrderError(path)
    return path


def _selected_bundles(cfg):
    """Bundle directories matching the subject / condition filters."""
    subjects = cfg["subjects"]
    condition = cfg["condition"]
    out = []
    for path in list_bundles(cfg.data_dir):
        man = json.loads((path / "manifest.json").read_text())
        if subjects is not None and man.get("subject") not in subjects:
            continue
        if condition is not None and man.get("condition") != condition:
            continue
        out.append(path)
    return out


def _manifest(bundle):
    return json.loads((Path(bundle) / "manifest.json").read_text())


def _mfcc_config(cfg):
    try:
        return MfccConfig(**cfg["mfcc"])
    except TypeError as exc:
        raise InvalidConfigError(f"bad mfcc config: {exc}") from exc


def _write_if_changed(path, data):
    path = Path(path)
    if path.exists() and path.read_bytes() == data:
        return
    path.write_bytes(data)


# --------------------------------------------------------------------------
# generate / prepare


def cmd_generate(cfg):
    g = dict(cfg["generate"])
    spec = SyntheticTaskSpec(seed=cfg["seed"], **g)
    recs = generate_synthetic_session(spec, cfg.data_dir)
    logger.info("wrote %d synthetic bundles to %s", len(recs), cfg.data_dir)
    return 0


def clean_eeg(eeg, fs, prep):
    """Apply the configured cleaning chain; returns ``(cleaned, provenance_steps)``."""
    x = np.asarray(eeg, dtype=np.float64)
    steps = []
    zero_phase = bool(prep["zero_phase"])
    for step in prep["steps"]:
        if step == "bandpass":
            b = prep["bandpass"]
            filt = dsp.design_bandpass(b["order"], b["low_hz"], b["high_hz"], fs)
            x = dsp.apply_iir(filt, x, zero_phase)
            steps.append({"step": "bandpass", "zero_phase": zero_phase, **b})
        elif step == "notch":
            n = prep["notch"]
            x = dsp.apply_iir(dsp.design_notch(n["freq_hz"], n["q"], fs), x, zero_phase)
            steps.append({"step": "notch", "zero_phase": zero_phase, **n})
        elif step == "ica":
            ica = prep["ica"]
            if not ica["enabled"]:
                continue
            model = dsp.fit_fastica(x, ica["n_components"], seed=ica.get("seed", 0),
                                    max_iter=ica["max_iter"], tol=ica["tol"])
            x = dsp.remove_components(model, x, ica["reject"])
            steps.append({"step": "ica", "n_components": model.n_components, "reject": list(ica["reject"]),
                          "converged": model.converged.tolist()})
    return x, steps


def cmd_prepare(cfg):
    bundles = _selected_bundles(cfg)

    def work(bundle):
        rec = load_recording_bundle(bundle)
        cleaned, steps = clean_eeg(rec.eeg, rec.eeg_rate, cfg["prepare"])
        _write_if_changed(bundle / CLEANED_EEG, np.ascontiguousarray(cleaned, dtype="<f4").tobytes())
        prov = {"source": "eeg.f32", "steps": steps}
        _write_if_changed(bundle / PROVENANCE, json.dumps(prov, indent=2, sort_keys=True).encode())

    return _report_failures(_map(work, bundles, cfg["jobs"]), "prepare")


# --------------------------------------------------------------------------
# features / split


def _preset(cfg):
    f = cfg["features"]
    name = cfg.feature_set
    overrides = dict(f["presets"].get(name, {}))
    overrides.setdefault("window_ms", f["window_ms"])
    overrides.setdefault("hop_ms", f["hop_ms"])
    try:
        return get_preset(name, **overrides)
    except TypeError as exc:
        raise InvalidConfigError(f"bad preset override for {name}: {exc}") from exc


def make_split(cfg, bundles):
    """Split each (subject, condition) group separately and merge."""
    groups = {}
    for b in bundles:
        man = _manifest(b)
        groups.setdefault((man["subject"], man["condition"]), []).append((b.name, man["utterance_text"]))
    merged = DatasetSplit([], [], [], cfg["seed"])
    sp = cfg["split"]
    for key in sorted(groups):
        ids = [i for i, _ in groups[key]]
        strata = [t for _, t in groups[key]] if sp["stratify"] else None
        s = split_dataset(ids, tuple(sp["ratios"]), cfg["seed"], strata)
        merged.train += s.train
        merged.validation += s.validation
        merged.test += s.test
    return merged


def cmd_features(cfg):
    bundles = _selected_bundles(cfg)
    if not bundles:
        raise NoDataError(f"no bundles selected in {cfg.data_dir}")
    out = cfg.output_dir
    preset = _preset(cfg)
    mcfg = _mfcc_config(cfg)
    for b in bundles:
        _require(b / CLEANED_EEG)

    def work(bundle):
        rec = load_recording_bundle(bundle, eeg_file=CLEANED_EEG)
        extract_features(rec.eeg, preset, rec.eeg_rate).save(out / "features" / cfg.feature_set / bundle.name)
        mfcc(rec.audio, mcfg).save(out / "mfcc" / bundle.name)

    status = _report_failures(_map(work, bundles, cfg["jobs"]), "features")
    out.mkdir(parents=True, exist_ok=True)
    _write_if_changed(out / "split.json", make_split(cfg, bundles).to_json().encode())
    return status


def _load_split(cfg):
    return DatasetSplit.from_json(_require(cfg.output_dir / "split.json").read_text())


def _groups(cfg, ids):
    """Map (subject, condition) -> ids, respecting the config filters."""
    selected = {b.name: _manifest(b) for b in _selected_bundles(cfg)}
    groups = {}
    for i in ids:
        if i in selected:
            man = selected[i]
            groups.setdefault((man["subject"], man["condition"]), []).append(i)
    return groups


# --------------------------------------------------------------------------
# reduce


def _kpca_path(cfg, subject, condition):
    return cfg.output_dir / "models" / f"kpca_{cfg.feature_set}_{subject}_{condition}.bin"


def cmd_reduce(cfg):
    split = _load_split(cfg)
    out = cfg.output_dir
    fdir = out / "features" / cfg.feature_set
    rdir = out / "reduced" / cfg.feature_set
    all_ids = split.train + split.validation + split.test
    groups = _groups(cfg, all_ids)
    train_ids = set(split.train)
    k = cfg.target_dim()
    kp = cfg["kpca"]
    status = 0
    for (subject, condition), ids in sorted(groups.items()):
        for i in ids:
            _require(fdir / i / "features.f32")
        if k is None:
            for i in ids:
                dest = rdir / i
                dest.mkdir(parents=True, exist_ok=True)
                for name in ("features.f32", "features.json"):
                    shutil.copyfile(fdir / i / name, dest / name)
            continue
        train = [FeatureSequence.load(fdir / i).data for i in ids if i in train_ids]
        if not train:
            raise NoDataError(f"no training recordings for {subject}/{condition}")
        model = KernelPCA(k, kernel=kp["kernel"], gamma=kp["gamma"], standardize=kp["standardize"],
                          max_fit_samples=kp["max_fit_samples"], random_state=cfg["seed"])
        model.fit(np.concatenate(train).astype(np.float64))
        path = _kpca_path(cfg, subject, condition)
        path.parent.mkdir(parents=True, exist_ok=True)
        model.save(path)

        def work(i):
            seq = FeatureSequence.load(fdir / i)
            FeatureSequence(model.transform(seq.data.astype(np.float64)), seq.frame_rate, "reduced").save(rdir / i)

        status |= _report_failures(_map(work, ids, cfg["jobs"]), "reduce")
    return status


# --------------------------------------------------------------------------
# train


def _gru_path(cfg, subject, condition):
    return cfg.output_dir / "models" / f"gru_{cfg.feature_set}_{subject}_{condition}.ckpt"


def load_pairs(cfg, ids):
    """Frame-aligned (reduced EEG features, MFCC) arrays, trimmed to the shorter length."""
    out = cfg.output_dir
    rdir = out / "reduced" / cfg.feature_set
    xs, ys = [], []
    for i in ids:
        x = FeatureSequence.load(_require(rdir / i)).data
        y = FeatureSequence.load(_require(out / "mfcc" / i)).data
        n = min(len(x), len(y))
        xs.append(x[:n])
        ys.append(y[:n])
    return xs, ys


def make_regressor(cfg):
    t = cfg["train"]
    return GRURegressor(hidden_sizes=tuple(t["hidden_sizes"]), dropout=t["dropout"], epochs=t["epochs"],
                        batch_size=t["batch_size"], learning_rate=t["learning_rate"], beta_1=t["beta_1"],
                        beta_2=t["beta_2"], epsilon=t["epsilon"],
                        standardize_targets=t["standardize_targets"], random_state=cfg["seed"])


def cmd_train(cfg):
    split = _load_split(cfg)
    val_ids = set(split.validation)
    for (subject, condition), ids in sorted(_groups(cfg, split.train + split.validation).items()):
        train = [i for i in ids if i not in val_ids]
        val = [i for i in ids if i in val_ids]
        if not train:
            raise NoDataError(f"no training recordings for {subject}/{condition}")
        xs, ys = load_pairs(cfg, train)
        vx, vy = load_pairs(cfg, val)
        logger.info("training %s/%s on %d utterances (%d validation)", subject, condition, len(xs), len(vx))
        model = make_regressor(cfg).fit(xs, ys, vx, vy)
        path = _gru_path(cfg, subject, condition)
        path.parent.mkdir(parents=True, exist_ok=True)
        model.save(path)
        model.history_.to_csv(path.with_name(path.stem + "_history.csv"))
    return 0


# --------------------------------------------------------------------------
# synth / eval


def _test_groups(cfg):
    split = _load_split(cfg)
    groups = _groups(cfg, split.test)
    if not groups:
        raise NoDataError("empty test split")
    return groups


def cmd_synth(cfg):
    mcfg = _mfcc_config(cfg)
    s = cfg["synth"]
    sdir = cfg.output_dir / "synth" / cfg.feature_set
    sdir.mkdir(parents=True, exist_ok=True)
    status = 0
    for (subject, condition), ids in sorted(_test_groups(cfg).items()):
        model = GRURegressor.load(_require(_gru_path(cfg, subject, condition)))
        xs, _ = load_pairs(cfg, ids)
        preds = model.predict(xs)

        def work(item):
            rec_id, pred = item
            seed = (zlib.crc32(rec_id.encode()) ^ int(cfg["seed"])) & 0xFFFFFFFF
            audio, conv = griffin_lim(invert_mfcc(pred, mcfg), hop=mcfg.hop,
                                      n_iter=s["griffin_lim_iterations"], seed=seed)
            peak = np.max(np.abs(audio))
            if peak > 0:
                audio = audio * (s["peak"] / peak)
            write_wav(sdir / f"{rec_id}.wav", audio, mcfg.sample_rate)
            with open(sdir / f"{rec_id}_convergence.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["iteration", "spectral_convergence"])
                for t, c in enumerate(conv, 1):
                    w.writerow([t, repr(float(c))])

        status |= _report_failures(_map(work, list(zip(ids, preds)), cfg["jobs"]), "synth")
    return status


def _file_digest(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()[:16]


def cmd_eval(cfg):
    groups = _test_groups(cfg)
    rows, ckpts = [], {}
    for (subject, condition), ids in sorted(groups.items()):
        path = _require(_gru_path(cfg, subject, condition))
        model = GRURegressor.load(path)
        ckpts[path.name] = _file_digest(path)
        xs, ys = load_pairs(cfg, ids)
        report = evaluate(model, [(subject, condition, x, y) for x, y in zip(xs, ys)], cfg.feature_set,
                          cfg["eval"]["mcd_normalization"], cfg["eval"]["include_c0"])
        rows.extend(report.rows)
    split_text = (cfg.output_dir / "split.json").read_bytes()
    meta = {"checkpoints": json.dumps(ckpts, sort_keys=True),
            "dataset": hashlib.sha256(split_text).hexdigest()[:16],
            "config": cfg.digest()}
    report = EvaluationReport(rows, meta).sorted()
    rdir = cfg.output_dir / "reports"
    rdir.mkdir(parents=True, exist_ok=True)
    report.to_csv(rdir / f"report_{cfg.feature_set}.csv")
    print(report.format_table())
    return 0


STAGES = {
    "generate": cmd_generate,
    "prepare": cmd_prepare,
    "features": cmd_features,
    "reduce": cmd_reduce,
    "train": cmd_train,
    "synth": cmd_synth,
    "eval": cmd_eval,
}
