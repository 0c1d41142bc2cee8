"""Recording bundles, train/validation/test splits and the synthetic session generator.

A bundle is a directory holding ``manifest.json``, ``eeg.f32`` (row-major
``[channels x samples]`` little-endian float32) and ``audio.wav`` (16-bit
mono PCM). Synthetic bundles also carry ``target.f32``, the ground-truth
MFCC trajectory ``[frames x 13]``.
"""
import json
import math
import wave
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acoustic import MfccConfig, mfcc
from .exceptions import (
    BundleNotFoundError,
    CorruptBundleError,
    InvalidRateError,
    InvalidSpecError,
    TooFewRecordingsError,
)

CONDITIONS = ("listen", "spoken")
PROMPTS = ("Hi Bixby", "Call Mom", "Open Camera", "What's the weather")
BANDPASS_HIGH_HZ = 70.0
# aspiration-noise level of synthetic audio relative to the peak harmonic level
NOISE_DB = -70.0


@dataclass(frozen=True, eq=False)
class Recording:
    id: str
    subject: str
    utterance_text: str
    condition: str
    eeg: np.ndarray
    audio: np.ndarray
    eeg_rate: float = 1000.0
    audio_rate: int = 16000
    channel_names: tuple = ()
    target: np.ndarray | None = None

    def __post_init__(self):
        eeg = np.asarray(self.eeg)
        if eeg.ndim != 2 or eeg.shape[0] < 1 or eeg.shape[1] < 1:
            raise CorruptBundleError(f"{self.id}: eeg must be [channels>=1 x samples>=1], got {eeg.shape}")
        if np.asarray(self.audio).size == 0:
            raise CorruptBundleError(f"{self.id}: empty audio")
        if self.condition not in CONDITIONS:
            raise CorruptBundleError(f"{self.id}: condition must be one of {CONDITIONS}")
        if not self.eeg_rate > 2 * BANDPASS_HIGH_HZ:
            raise InvalidRateError(f"{self.id}: eeg_rate {self.eeg_rate} Hz puts Nyquist below "
                                   f"the {BANDPASS_HIGH_HZ} Hz band edge")
        if abs(self.eeg_duration - self.audio_duration) > 0.1:
            raise CorruptBundleError(f"{self.id}: eeg lasts {self.eeg_duration:.3f} s but audio "
                                     f"{self.audio_duration:.3f} s")
        if not self.channel_names:
            object.__setattr__(self, "channel_names", tuple(f"ch{i:02d}" for i in range(eeg.shape[0])))

    @property
    def n_channels(self):
        return self.eeg.shape[0]

    @property
    def eeg_duration(self):
        return self.eeg.shape[1] / self.eeg_rate

    @property
    def audio_duration(self):
        return len(self.audio) / self.audio_rate

    def manifest(self):
        return {
            "subject": self.subject,
            "condition": self.condition,
            "utterance_text": self.utterance_text,
            "channels": int(self.n_channels),
            "eeg_rate_hz": self.eeg_rate,
            "audio_rate_hz": self.audio_rate,
            "channel_names": list(self.channel_names),
        }


def read_wav(path):
    """16-bit mono PCM -> (float samples in [-1, 1), rate)."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2 or wf.getnchannels() != 1:
            raise CorruptBundleError(f"{path}: expected 16-bit mono PCM")
        rate = wf.getframerate()
        pcm = np.frombuffer(wf.readframes(wf.getnframes()), dtype="<i2")
    return pcm.astype(np.float64) / 32768.0, rate


def write_wav(path, audio, rate):
    pcm = np.clip(np.round(np.asarray(audio, dtype=np.float64) * 32768.0), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(int(rate))
        wf.writeframes(pcm.tobytes())


def quantize_pcm16(audio):
    """Round to the 16-bit grid so a WAV round trip is exact."""
    return np.clip(np.round(np.asarray(audio) * 32768.0), -32768, 32767) / 32768.0


def write_recording_bundle(rec, directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    np.ascontiguousarray(rec.eeg, dtype="<f4").tofile(directory / "eeg.f32")
    write_wav(directory / "audio.wav", rec.audio, rec.audio_rate)
    manifest = rec.manifest()
    if rec.target is not None:
        np.ascontiguousarray(rec.target, dtype="<f4").tofile(directory / "target.f32")
        manifest["target_dim"] = int(rec.target.shape[1])
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return directory


def load_recording_bundle(path, eeg_file="eeg.f32"):
    """Read a bundle directory; the directory name becomes the recording id."""
    path = Path(path)
    for name in ("manifest.json", eeg_file, "audio.wav"):
        if not (path / name).is_file():
            raise BundleNotFoundError(f"{path / name} not found")
    try:
        man = json.loads((path / "manifest.json").read_text())
        n_ch = int(man["channels"])
        eeg_rate = float(man["eeg_rate_hz"])
        audio_rate = int(man["audio_rate_hz"])
    except (KeyError, ValueError, TypeError) as exc:
        raise CorruptBundleError(f"{path}: bad manifest ({exc})") from exc
    if not eeg_rate > 2 * BANDPASS_HIGH_HZ:
        raise InvalidRateError(f"{path}: eeg_rate {eeg_rate} Hz is below twice the {BANDPASS_HIGH_HZ} Hz band edge")

    flat = np.fromfile(path / eeg_file, dtype="<f4")
    if n_ch < 1 or flat.size == 0 or flat.size % n_ch:
        raise CorruptBundleError(f"{path}: {flat.size} floats cannot hold {n_ch} channels")
    eeg = flat.reshape(n_ch, -1).astype(np.float32)
    audio, wav_rate = read_wav(path / "audio.wav")
    if wav_rate != audio_rate:
        raise CorruptBundleError(f"{path}: wav rate {wav_rate} != manifest rate {audio_rate}")

    target = None
    if (path / "target.f32").is_file():
        dim = int(man.get("target_dim", 13))
        t = np.fromfile(path / "target.f32", dtype="<f4")
        if t.size % dim:
            raise CorruptBundleError(f"{path}: target.f32 size {t.size} not a multiple of {dim}")
        target = t.reshape(-1, dim).astype(np.float32)
    names = tuple(man.get("channel_names") or ())
    if names and len(names) != n_ch:
        raise CorruptBundleError(f"{path}: {len(names)} channel names for {n_ch} channels")
    return Recording(path.name, str(man.get("subject", "")), str(man.get("utterance_text", "")),
                     man.get("condition", ""), eeg, audio, eeg_rate, audio_rate, names, target)


def list_bundles(data_dir):
    data_dir = Path(data_dir)
    if not data_dir.is_dir():
        raise BundleNotFoundError(f"{data_dir} is not a directory")
    return sorted(p for p in data_dir.iterdir() if (p / "manifest.json").is_file())


# --------------------------------------------------------------------------
# splitting


@dataclass
class DatasetSplit:
    train: list
    validation: list
    test: list
    seed: int

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls(**json.loads(text))

    def part_of(self, rec_id):
        for name in ("train", "validation", "test"):
            if rec_id in getattr(self, name):
                return name
        raise KeyError(rec_id)


def _round_half_up(x):
    return int(math.floor(x + 0.5))


def split_sizes(n, ratios=(0.8, 0.1, 0.1)):
    """``(train, val, test)`` counts: rounded shares, each at least 1, summing to ``n``."""
    if n < 3:
        raise TooFewRecordingsError(f"need at least 3 recordings for a three-way split, got {n}")
    n_val = max(1, _round_half_up(ratios[1] * n))
    n_test = max(1, _round_half_up(ratios[2] * n))
    return n - n_val - n_test, n_val, n_test


def split_dataset(ids, ratios=(0.8, 0.1, 0.1), seed=0, strata=None):
    """Seeded shuffle then contiguous train/validation/test assignment.

    With ``strata`` (one label per id, e.g. the utterance text) each stratum
    is split separately and the parts are concatenated.
    """
    ids = list(ids)
    if len(set(ids)) != len(ids):
        raise ValueError("ids must be distinct")
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ValueError(f"ratios must be three non-negative shares summing to 1, got {ratios}")
    if len(ids) < 3:
        raise TooFewRecordingsError(f"need at least 3 recordings, got {len(ids)}")
    rng = np.random.default_rng(seed)
    if strata is None:
        groups = [ids]
    else:
        labels = list(strata)
        if len(labels) != len(ids):
            raise ValueError("strata must have one label per id")
        groups = [[i for i, lab in zip(ids, labels) if lab == key] for key in sorted(set(labels))]
    train, val, test = [], [], []
    for group in groups:
        perm = [group[i] for i in rng.permutation(len(group))]
        if len(group) < 3:
            train.extend(perm)
            continue
        n_tr, n_va, _ = split_sizes(len(group), ratios)
        train.extend(perm[:n_tr])
        val.extend(perm[n_tr:n_tr + n_va])
        test.extend(perm[n_tr + n_va:])
    return DatasetSplit(train, val, test, seed)


# --------------------------------------------------------------------------
# synthetic sessions


@dataclass(frozen=True)
class SyntheticTaskSpec:
    """Parameters of a synthetic session with a known EEG <- MFCC map.

    EEG = ``mixing @ mfcc(t) + offset`` (MFCC trajectory linearly
    interpolated to the EEG rate) plus white noise at ``snr_db`` per channel.
    ``snr_db=inf`` gives noiseless EEG.
    """

    n_channels: int = 31
    n_recordings: int = 40
    duration_s: float = 2.0
    snr_db: float = 20.0
    seed: int = 0
    eeg_rate: float = 1000.0
    audio_rate: int = 16000
    eeg_scale_uv: float = 10.0
    line_noise_uv: float = 0.0
    control_max_hz: float = 1.0
    subject: str = "synth"
    condition: str = "spoken"

    def __post_init__(self):
        if self.n_channels < 1:
            raise InvalidSpecError("n_channels must be >= 1")
        if not self.duration_s > 0:
            raise InvalidSpecError("duration_s must be > 0")
        if self.n_recordings < 0:
            raise InvalidSpecError("n_recordings must be >= 0")
        if self.n_channels < MfccConfig().n_coeffs:
            raise InvalidSpecError(f"n_channels must be >= {MfccConfig().n_coeffs} for an invertible mixing map")


@dataclass
class SyntheticSession:
    recordings: list
    mixing: np.ndarray
    offset: np.ndarray
    spec: SyntheticTaskSpec = field(default_factory=SyntheticTaskSpec)


def _smooth_control(rng, t, lo, hi, n_terms=3, max_hz=2.0):
    """Random band-limited curve in [lo, hi]."""
    curve = np.zeros_like(t)
    for _ in range(n_terms):
        curve += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * rng.uniform(0.1, max_hz) * t + rng.uniform(0, 2 * np.pi))
    curve /= n_terms
    return lo + (hi - lo) * (curve + 1.0) / 2.0


def synthetic_audio(rng, duration_s, rate, max_hz=1.0):
    """Harmonic-plus-noise waveform with slowly moving pitch, loudness and formants.

    ``max_hz`` bounds the modulation frequency of every control curve.
    """
    n = int(round(duration_s * rate))
    t = np.arange(n) / rate

    def control(lo, hi):
        return _smooth_control(rng, t, lo, hi, max_hz=max_hz)

    f0 = control(*sorted(rng.uniform(90, 240, 2)))
    amp = control(0.05, 0.3)
    tilt = control(0.4, 1.1)
    f1 = control(300, 900)
    f2 = control(1000, 2600)
    f3 = control(2600, 4000)
    phase = 2 * np.pi * np.cumsum(f0) / rate
    out = np.zeros(n)
    nyq = rate / 2
    for k in range(1, int(nyq / 90) + 1):
        fk = k * f0
        gain = k ** (-tilt) * (1.0 + 8 * np.exp(-((fk - f1) / 150) ** 2)
                               + 5 * np.exp(-((fk - f2) / 250) ** 2)
                               + 3 * np.exp(-((fk - f3) / 350) ** 2))
        gain = np.where(fk < nyq - 200, gain, 0.0)
        out += gain * np.sin(k * phase + rng.uniform(0, 2 * np.pi))
    out *= amp / max(np.max(np.abs(out)), 1e-12)
    out += 10 ** (NOISE_DB / 20) * 0.3 * rng.standard_normal(n)
    return quantize_pcm16(out)


def upsample_frames(frames, frame_times, sample_times):
    """Linear interpolation of ``[frames x dim]`` onto ``sample_times`` (edges held)."""
    return np.stack([np.interp(sample_times, frame_times, col) for col in frames.T])


def mfcc_frame_times(n_frames, config=MfccConfig()):
    return (np.arange(n_frames) * config.hop + config.n_fft / 2) / config.sample_rate


def build_synthetic_session(spec):
    """Generate audio, its MFCCs, and EEG from a random full-rank mixing map.

    The map is scaled per coefficient by the session's MFCC spread and
    centred on the session mean, so every coefficient contributes equally
    and the EEG has no large DC offset.
    """
    cfg = MfccConfig(sample_rate=spec.audio_rate)
    audios, targets = [], []
    for i in range(spec.n_recordings):
        rng = np.random.default_rng([spec.seed, 1, i])
        audio = synthetic_audio(rng, spec.duration_s, spec.audio_rate, spec.control_max_hz)
        audios.append(audio)
        targets.append(mfcc(audio, cfg).data)

    rng = np.random.default_rng([spec.seed, 0])
    # orthonormal columns keep the least-squares inverse well conditioned; rows have unit rms norm
    q, r = np.linalg.qr(rng.standard_normal((spec.n_channels, cfg.n_coeffs)))
    base = q * np.sign(np.diag(r)) * np.sqrt(spec.n_channels / cfg.n_coeffs)
    if targets:
        frames = np.concatenate(targets)
        centre, spread = frames.mean(axis=0), frames.std(axis=0)
        spread = np.where(spread > 0, spread, 1.0)
    else:
        centre, spread = np.zeros(cfg.n_coeffs), np.ones(cfg.n_coeffs)
    mixing = spec.eeg_scale_uv * base / spread
    offset = -mixing @ centre

    recordings = []
    n_eeg = int(round(spec.duration_s * spec.eeg_rate))
    sample_times = np.arange(n_eeg) / spec.eeg_rate
    for i, (audio, target) in enumerate(zip(audios, targets)):
        rng = np.random.default_rng([spec.seed, 2, i])
        latent = upsample_frames(target, mfcc_frame_times(len(target), cfg), sample_times)
        clean = mixing @ latent + offset[:, None]
        eeg = clean.copy()
        if np.isfinite(spec.snr_db):
            power = np.mean(clean ** 2, axis=1, keepdims=True)
            eeg += np.sqrt(power * 10 ** (-spec.snr_db / 10)) * rng.standard_normal(clean.shape)
        if spec.line_noise_uv:
            ph = rng.uniform(0, 2 * np.pi, (spec.n_channels, 1))
            eeg += spec.line_noise_uv * np.sin(2 * np.pi * 60.0 * sample_times + ph)
        rec_id = f"{spec.subject}_{spec.condition}_{i:04d}"
        recordings.append(Recording(rec_id, spec.subject, PROMPTS[i % len(PROMPTS)], spec.condition,
                                    eeg.astype(np.float32), audio, spec.eeg_rate, spec.audio_rate,
                                    target=target.astype(np.float32)))
    return SyntheticSession(recordings, mixing, offset, spec)


def generate_synthetic_session(spec, out_dir=None):
    """Build a session and, if ``out_dir`` is given, write one bundle per recording
    plus ``session.json`` describing the mixing map."""
    session = build_synthetic_session(spec)
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for rec in session.recordings:
            write_recording_bundle(rec, out_dir / rec.id)
        meta = {"spec": {k: (v if not (isinstance(v, float) and math.isinf(v)) else "inf")
                         for k, v in asdict(spec).items()},
                "mixing": session.mixing.tolist(), "offset": session.offset.tolist()}
        (out_dir / "session.json").write_text(json.dumps(meta, indent=2, sort_keys=True))
    return session.recordings
