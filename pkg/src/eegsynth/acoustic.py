"""MFCC analysis at 100 frames/s and MFCC -> waveform synthesis via Griffin-Lim."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from .dsp import ComplexSpectrogram, istft, stft
from .eeg_features import FeatureSequence
from .exceptions import InvalidConfigError, InvalidInputError, ShapeError


@dataclass(frozen=True)
class MfccConfig:
    sample_rate: int = 16000
    n_fft: int = 400
    hop: int = 160
    n_mels: int = 40
    n_coeffs: int = 13
    fmin: float = 0.0
    fmax: float = 8000.0
    log_floor: float = 1e-10
    preemphasis: float = 0.0
    lifter: int = 0

    def __post_init__(self):
        if self.sample_rate % self.hop or self.sample_rate // self.hop != 100:
            raise InvalidConfigError(
                f"sample_rate / hop must be 100 frames/s, got {self.sample_rate}/{self.hop}")
        if not 1 <= self.n_coeffs <= self.n_mels:
            raise InvalidConfigError("need 1 <= n_coeffs <= n_mels")
        if self.fmax > self.sample_rate / 2 or not 0 <= self.fmin < self.fmax:
            raise InvalidConfigError(f"band [{self.fmin}, {self.fmax}] Hz invalid for "
                                     f"sample_rate {self.sample_rate}")
        if self.n_fft < self.hop:
            raise InvalidConfigError("n_fft must be >= hop")

    @property
    def frame_rate(self):
        return self.sample_rate / self.hop

    @property
    def n_bins(self):
        return self.n_fft // 2 + 1


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@dataclass(frozen=True)
class MelFilterbank:
    weights: np.ndarray
    centers_hz: np.ndarray
    config: MfccConfig


def mel_filterbank(config=MfccConfig()):
    """Triangular filters, centres equally spaced in mel between fmin and fmax."""
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_mels + 2))
    bins = np.arange(config.n_bins) * config.sample_rate / config.n_fft
    lo, mid, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (bins - lo) / (mid - lo)
    falling = (hi - bins) / (hi - mid)
    weights = np.maximum(0.0, np.minimum(rising, falling))
    if np.any(weights.sum(axis=1) <= 0):
        raise InvalidConfigError("some mel filters cover no FFT bin; lower n_mels or raise n_fft")
    return MelFilterbank(weights, edges[1:-1], config)


def dct_matrix(n):
    """Orthonormal DCT-II as an ``n x n`` matrix (rows are basis vectors)."""
    k = np.arange(n)[:, None]
    i = np.arange(n)[None, :]
    mat = np.cos(np.pi * k * (2 * i + 1) / (2 * n)) * np.sqrt(2.0 / n)
    mat[0] /= np.sqrt(2.0)
    return mat


def _lifter_weights(config):
    if config.lifter <= 0:
        return np.ones(config.n_coeffs)
    n = np.arange(config.n_coeffs)
    return 1.0 + (config.lifter / 2.0) * np.sin(np.pi * n / config.lifter)


def power_spectrogram(audio, config=MfccConfig()):
    audio = np.asarray(audio, dtype=np.float64)
    if audio.ndim != 1 or audio.size == 0:
        raise InvalidInputError("audio must be a non-empty 1-D array")
    if config.preemphasis:
        audio = np.append(audio[0], audio[1:] - config.preemphasis * audio[:-1])
    spec = stft(audio, config.n_fft, config.hop, config.sample_rate)
    return np.abs(spec.frames) ** 2


def cepstra_from_power(power, config=MfccConfig(), fbank=None):
    fb = fbank if fbank is not None else mel_filterbank(config)
    mel = power @ fb.weights.T
    logmel = np.log(np.maximum(mel, config.log_floor))
    ceps = logmel @ dct_matrix(config.n_mels)[: config.n_coeffs].T
    return ceps * _lifter_weights(config)


def mfcc(audio, config=MfccConfig()):
    """13 cepstral coefficients per 10 ms frame.

    STFT power -> mel energies -> floored log -> orthonormal DCT-II, keeping
    the first ``n_coeffs``.
    """
    ceps = cepstra_from_power(power_spectrogram(audio, config), config)
    return FeatureSequence(ceps, config.frame_rate, "mfcc")


def invert_mfcc(ceps, config=MfccConfig()):
    """Estimate a linear magnitude spectrogram ``[frames x bins]`` from cepstra.

    The truncated cepstrum is zero-padded, inverse-DCT'd and exponentiated to
    mel energies. Linear-bin power is then recovered per frame by
    non-negative least squares against the filterbank, with rows weighted by
    the target energy so quiet bands are fit in relative rather than absolute
    terms.
    """
    data = ceps.data if isinstance(ceps, FeatureSequence) else np.atleast_2d(np.asarray(ceps, dtype=np.float64))
    if data.shape[1] != config.n_coeffs:
        raise ShapeError(f"expected {config.n_coeffs} coefficients, got {data.shape[1]}")
    data = data / _lifter_weights(config)
    padded = np.zeros((data.shape[0], config.n_mels))
    padded[:, : config.n_coeffs] = data
    mel = np.exp(padded @ dct_matrix(config.n_mels))  # inverse of orthonormal DCT is its transpose
    power = mel_to_linear(mel, mel_filterbank(config).weights)
    return np.sqrt(power)


def mel_to_linear(mel, weights, ridge=1e-6):
    """Non-negative ``S`` with ``S @ weights.T ~= mel`` per row, in relative error.

    Writing ``S = s0 * u`` with ``s0`` the band energies spread evenly over
    each filter's bins, the fit is ``A u = 1`` with ``A = diag(1/mel) W
    diag(s0)``. The minimum-norm correction of ``u = 1`` solves this exactly
    and is used whenever it is non-negative; other frames fall back to a
    non-negative least-squares fit with a small pull (``ridge``) towards
    ``u = 1``.
    """
    mel = np.atleast_2d(np.asarray(mel, dtype=np.float64))
    colsum = weights.sum(axis=0)
    s0 = (mel / weights.sum(axis=1)) @ weights / np.where(colsum > 0, colsum, 1.0)
    s0 = np.maximum(s0, 1e-300)
    A = weights[None] * s0[:, None, :] / np.maximum(mel, 1e-300)[:, :, None]
    resid = 1.0 - A.sum(axis=2)
    gram = A @ A.transpose(0, 2, 1)
    u = 1.0 + np.einsum("fmb,fm->fb", A, np.linalg.solve(gram, resid[:, :, None])[..., 0])
    n_bins = weights.shape[1]
    for i in np.flatnonzero(u.min(axis=1) < 0):
        lhs = np.vstack([A[i], np.sqrt(ridge) * np.eye(n_bins)])
        rhs = np.concatenate([np.ones(len(A[i])), np.full(n_bins, np.sqrt(ridge))])
        u[i] = nnls(lhs, rhs)[0]
    return s0 * u


def spectral_convergence(mag, x, n_fft, hop):
    denom = np.linalg.norm(mag)
    if denom == 0:
        return 0.0
    est = np.abs(stft(x, n_fft, hop).frames)
    return float(np.linalg.norm(est - mag) / denom)


def griffin_lim(mag, hop=160, n_iter=60, seed=0, momentum=0.9):
    """Recover a waveform whose STFT magnitude approximates ``mag``.

    ``mag`` is ``[frames x bins]`` with ``n_fft = 2 * (bins - 1)``; the
    initial phase is uniform random from ``seed``. Each iteration imposes
    ``mag`` on the current phase and re-projects onto consistent
    spectrograms, extrapolating by ``momentum`` (fast Griffin-Lim). A step
    that would raise the spectral convergence is redone without momentum,
    which keeps the sequence non-increasing; ``momentum=0`` is the classic
    algorithm.

    Returns ``(audio, convergence)`` where ``convergence[t]`` is the spectral
    convergence of the signal produced at iteration ``t``.
    """
    mag = np.atleast_2d(np.asarray(mag, dtype=np.float64))
    if np.any(mag < 0) or not np.all(np.isfinite(mag)):
        raise InvalidInputError("magnitudes must be finite and non-negative")
    n_fft = 2 * (mag.shape[1] - 1)
    length = (mag.shape[0] - 1) * hop + n_fft
    norm = np.linalg.norm(mag)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(mag.shape))

    def project(angles):
        x = istft(ComplexSpectrogram(mag * angles, n_fft, hop, length=length))
        est = stft(x, n_fft, hop).frames
        c = np.linalg.norm(np.abs(est) - mag) / norm if norm > 0 else 0.0
        return x, est, c

    conv = np.zeros(n_iter)
    x = np.zeros(length)
    est = prev = None
    for t in range(n_iter):
        if est is None:
            target = phase
        else:
            target = _unit_phase(est + momentum * (est - prev)) if momentum else _unit_phase(est)
        x_new, est_new, c = project(target)
        if momentum and t > 0 and c > conv[t - 1]:
            x_new, est_new, c = project(_unit_phase(est))
        prev = est if est is not None else est_new
        x, est, conv[t] = x_new, est_new, c
    return x, conv


def _unit_phase(spec):
    return np.exp(1j * np.angle(spec))


def synthesize(ceps, config=MfccConfig(), n_iter=60, seed=0):
    """Predicted MFCC -> magnitude spectrogram -> Griffin-Lim waveform."""
    return griffin_lim(invert_mfcc(ceps, config), hop=config.hop, n_iter=n_iter, seed=seed)
