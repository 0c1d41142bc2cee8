"""Signal primitives: biquad IIR design and filtering, FastICA, STFT/iSTFT."""
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import signal as _sig

from .exceptions import (
    ConvergenceWarning,
    InvalidComponentError,
    InvalidCutoffError,
    InvalidInputError,
    ShapeError,
)


@dataclass(frozen=True)
class IirFilter:
    """Cascade of second-order sections.

    ``sections`` has one row ``(b0, b1, b2, a1, a2)`` per biquad; every
    section's ``a0`` is implicitly 1.
    """

    sections: np.ndarray
    description: str = ""

    def __post_init__(self):
        sos = np.atleast_2d(np.asarray(self.sections, dtype=np.float64))
        if sos.shape[1] != 5:
            raise ShapeError(f"sections must have 5 columns, got {sos.shape}")
        object.__setattr__(self, "sections", sos)

    @classmethod
    def identity(cls):
        return cls(np.array([[1.0, 0.0, 0.0, 0.0, 0.0]]), "identity")

    def to_sos(self):
        """Return the scipy-style ``(n, 6)`` array with explicit a0 = 1."""
        s = self.sections
        return np.column_stack([s[:, :3], np.ones(len(s)), s[:, 3:]])

    def poles(self):
        out = []
        for _, _, _, a1, a2 in self.sections:
            out.extend(np.roots([1.0, a1, a2]))
        return np.asarray(out, dtype=complex)

    def is_stable(self, margin=1e-9):
        p = self.poles()
        return bool(np.all(np.abs(p) < 1.0 - margin))

    def frequency_response(self, freqs, fs):
        """Complex response at ``freqs`` (Hz) by direct evaluation on the unit circle."""
        z = np.exp(-2j * np.pi * np.asarray(freqs, dtype=np.float64) / fs)
        h = np.ones_like(z)
        for b0, b1, b2, a1, a2 in self.sections:
            h = h * (b0 + b1 * z + b2 * z * z) / (1.0 + a1 * z + a2 * z * z)
        return h

    def coefficient_table(self):
        lines = [f"# {self.description}", "section        b0             b1             b2             a1             a2"]
        for i, row in enumerate(self.sections):
            lines.append(f"{i:7d} " + " ".join(f"{v: .8e}" for v in row))
        return "\n".join(lines)


def _check_band(freqs, fs):
    nyq = fs / 2.0
    for f in freqs:
        if not 0.0 < f < nyq:
            raise InvalidCutoffError(f"cutoff {f} Hz must lie in (0, {nyq}) for fs={fs} Hz")


def design_bandpass(order=4, low=0.1, high=70.0, fs=1000.0):
    """Butterworth band-pass as a cascade of ``order`` biquads.

    ``order`` is the order of the low-pass prototype (the MATLAB/scipy
    convention), so the digital filter has ``2 * order`` poles. Cutoffs are
    pre-warped so the -3 dB points land exactly on ``low`` and ``high``.
    """
    if order < 1:
        raise ValueError("order must be >= 1")
    _check_band((low, high), fs)
    if not low < high:
        raise InvalidCutoffError(f"low cutoff {low} must be below high cutoff {high}")

    fs2 = 2.0 * fs
    w1 = fs2 * np.tan(np.pi * low / fs)
    w2 = fs2 * np.tan(np.pi * high / fs)
    bw = w2 - w1
    w0sq = w1 * w2

    k = np.arange(1, order + 1)
    proto = np.exp(1j * np.pi * (2 * k + order - 1) / (2 * order))
    # low-pass -> band-pass: each prototype pole p yields roots of s^2 - p*bw*s + w0^2
    disc = np.sqrt((proto * bw) ** 2 - 4.0 * w0sq + 0j)
    s_poles = np.concatenate([(proto * bw + disc) / 2.0, (proto * bw - disc) / 2.0])
    z_poles = (fs2 + s_poles) / (fs2 - s_poles)

    # analog zeros at s=0 map to z=1, zeros at infinity map to z=-1: each section gets (1 - z^-2)
    sections = []
    upper = z_poles[z_poles.imag > 1e-12]
    real = np.sort(z_poles[np.abs(z_poles.imag) <= 1e-12].real)
    for p in upper:
        sections.append([1.0, 0.0, -1.0, -2.0 * p.real, abs(p) ** 2])
    for i in range(0, len(real), 2):
        p1, p2 = real[i], real[i + 1]
        sections.append([1.0, 0.0, -1.0, -(p1 + p2), p1 * p2])
    sos = np.asarray(sections, dtype=np.float64)

    # unit gain per section at the band centre (where the analog response is exactly 1)
    fc = fs / np.pi * np.arctan(np.sqrt(w0sq) / fs2)
    zc = np.exp(-2j * np.pi * fc / fs)
    for row in sos:
        b0, b1, b2, a1, a2 = row
        g = abs((b0 + b1 * zc + b2 * zc * zc) / (1.0 + a1 * zc + a2 * zc * zc))
        row[:3] /= g
    return IirFilter(sos, f"butterworth band-pass order {order}, {low}-{high} Hz @ {fs} Hz")


def design_notch(f0=60.0, q=30.0, fs=1000.0):
    """Second-order notch at ``f0`` with -3 dB bandwidth ``f0 / q``."""
    _check_band((f0,), fs)
    if q <= 0:
        raise ValueError("q must be positive")
    w0 = 2.0 * np.pi * f0 / fs
    bw = w0 / q
    gain = 1.0 / (1.0 + np.tan(bw / 2.0))
    c = np.cos(w0)
    sos = np.array([[gain, -2.0 * gain * c, gain, -2.0 * gain * c, 2.0 * gain - 1.0]])
    return IirFilter(sos, f"notch {f0} Hz, Q={q} @ {fs} Hz")


def apply_iir(filt, x, zero_phase=False, axis=-1):
    """Run ``x`` through the section cascade along ``axis`` with zero initial state.

    With ``zero_phase`` the cascade is applied forward then backward.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidInputError("cannot filter an empty signal")
    sos = filt.to_sos()
    y = _sig.sosfilt(sos, x, axis=axis)
    if zero_phase:
        y = np.flip(_sig.sosfilt(sos, np.flip(y, axis=axis), axis=axis), axis=axis)
    return y


@dataclass
class IcaModel:
    unmixing: np.ndarray
    mixing: np.ndarray
    whitening: np.ndarray
    means: np.ndarray
    converged: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))
    n_iter: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int))

    @property
    def n_components(self):
        return self.unmixing.shape[0]

    def sources(self, eeg):
        eeg = np.asarray(eeg, dtype=np.float64)
        return self.unmixing @ (eeg - self.means[:, None])


def fit_fastica(eeg, n_components=None, seed=0, max_iter=200, tol=1e-4):
    """Deflationary FastICA with the tanh contrast.

    Data are mean-centred and PCA-whitened down to ``n_components``; each
    unit vector is then found by fixed-point iteration with Gram-Schmidt
    decorrelation against the ones already extracted. Components that do
    not reach ``|<w_new, w_old>| - 1 < tol`` are flagged in ``converged``
    and a ConvergenceWarning is emitted.
    """
    x = np.asarray(eeg, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError("eeg must be [channels x samples]")
    n_ch, n_samp = x.shape
    if n_components is None:
        n_components = n_ch
    if not 1 <= n_components <= n_ch:
        raise ValueError(f"n_components={n_components} must be in [1, {n_ch}]")
    if n_samp <= n_ch:
        raise ValueError("need more samples than channels")

    means = x.mean(axis=1)
    xc = x - means[:, None]
    cov = xc @ xc.T / n_samp
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:n_components]
    evals, evecs = evals[order], evecs[:, order]
    if np.any(evals <= 0):
        raise ValueError("covariance is rank deficient for the requested n_components")
    whitening = evecs.T / np.sqrt(evals)[:, None]
    z = whitening @ xc

    rng = np.random.default_rng(seed)
    W = np.zeros((n_components, n_components))
    converged = np.zeros(n_components, dtype=bool)
    n_iter = np.zeros(n_components, dtype=int)
    for c in range(n_components):
        w = rng.standard_normal(n_components)
        w -= W[:c].T @ (W[:c] @ w)
        w /= np.linalg.norm(w)
        for it in range(1, max_iter + 1):
            wx = w @ z
            g = np.tanh(wx)
            g_prime = 1.0 - g * g
            w_new = (z * g).mean(axis=1) - g_prime.mean() * w
            w_new -= W[:c].T @ (W[:c] @ w_new)
            w_new /= np.linalg.norm(w_new)
            dist = abs(abs(w_new @ w) - 1.0)
            w = w_new
            if dist < tol:
                converged[c] = True
                break
        n_iter[c] = it
        W[c] = w

    if not converged.all():
        failed = np.flatnonzero(~converged).tolist()
        warnings.warn(f"FastICA components {failed} did not converge in {max_iter} iterations",
                      ConvergenceWarning, stacklevel=2)

    unmixing = W @ whitening
    mixing = np.linalg.pinv(unmixing)
    return IcaModel(unmixing, mixing, whitening, means, converged, n_iter)


def remove_components(model, eeg, reject=()):
    """Zero the rejected sources and project back to channel space."""
    eeg = np.asarray(eeg, dtype=np.float64)
    if eeg.ndim != 2 or eeg.shape[0] != model.mixing.shape[0]:
        raise ShapeError(f"eeg shape {eeg.shape} does not match model with {model.mixing.shape[0]} channels")
    reject = list(reject)
    for idx in reject:
        if not 0 <= idx < model.n_components:
            raise InvalidComponentError(f"component {idx} out of range [0, {model.n_components})")
    s = model.sources(eeg)
    s[reject] = 0.0
    return model.mixing @ s + model.means[:, None]


@dataclass(frozen=True)
class ComplexSpectrogram:
    frames: np.ndarray
    n_fft: int
    hop: int
    sample_rate: float = 1.0
    window: str = "hann"
    length: int | None = None

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.n_fft // 2 + 1:
            raise ShapeError(f"frames must be [n_frames x {self.n_fft // 2 + 1}], got {self.frames.shape}")

    @property
    def n_frames(self):
        return self.frames.shape[0]

    def magnitude(self):
        return np.abs(self.frames)


def hann(n):
    """Periodic Hann window (COLA-friendly)."""
    return 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)


def n_stft_frames(length, n_fft, hop):
    if length <= n_fft:
        return 1
    return 1 + -(-(length - n_fft) // hop)


def stft(x, n_fft, hop, sample_rate=1.0):
    """Hann-windowed one-sided STFT; the tail is zero-padded to a full frame."""
    if not n_fft >= hop > 0:
        raise ValueError("require n_fft >= hop > 0")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise ShapeError("stft expects a 1-D signal")
    n = n_stft_frames(len(x), n_fft, hop)
    padded = np.zeros((n - 1) * hop + n_fft)
    padded[: len(x)] = x
    frames = np.lib.stride_tricks.sliding_window_view(padded, n_fft)[::hop]
    spec = np.fft.rfft(frames * hann(n_fft), axis=1)
    return ComplexSpectrogram(spec, n_fft, hop, sample_rate, "hann", len(x))


def istft(spec, length=None):
    """Weighted overlap-add inverse of :func:`stft`.

    Each frame is windowed again and the sum is divided by the summed squared
    window, which is the least-squares signal estimate for the given frames.
    Samples with no window coverage are set to zero.
    """
    n_fft, hop = spec.n_fft, spec.hop
    n = spec.n_frames
    win = hann(n_fft)
    frames = np.fft.irfft(spec.frames, n=n_fft, axis=1) * win
    total = (n - 1) * hop + n_fft
    out = np.zeros(total)
    norm = np.zeros(total)
    for i in range(n):
        out[i * hop: i * hop + n_fft] += frames[i]
        norm[i * hop: i * hop + n_fft] += win * win
    nz = norm > 1e-10
    out[nz] /= norm[nz]
    out[~nz] = 0.0
    if length is None:
        length = spec.length if spec.length is not None else total
    if length <= total:
        return out[:length]
    return np.concatenate([out, np.zeros(length - total)])
