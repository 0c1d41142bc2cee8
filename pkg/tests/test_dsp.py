import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import signal

from eegsynth.dsp import (
    IirFilter,
    apply_iir,
    design_bandpass,
    design_notch,
    fit_fastica,
    hann,
    istft,
    n_stft_frames,
    remove_components,
    stft,
)
from eegsynth.exceptions import InvalidComponentError, InvalidCutoffError, InvalidInputError

FS = 1000.0


def df2t_reference(sections, x):
    """Plain-Python direct-form-II-transposed cascade, used as an oracle."""
    y = list(x)
    for b0, b1, b2, a1, a2 in sections:
        s1 = s2 = 0.0
        out = []
        for v in y:
            o = b0 * v + s1
            s1 = b1 * v - a1 * o + s2
            s2 = b2 * v - a2 * o
            out.append(o)
        y = out
    return np.array(y)


# ---------------------------------------------------------------- design


def test_bandpass_edges_are_half_power():
    filt = design_bandpass(4, 0.1, 70.0, FS)
    mag = np.abs(filt.frequency_response([0.1, 70.0], FS))
    np.testing.assert_allclose(mag, 1 / np.sqrt(2), rtol=0.05)
    np.testing.assert_allclose(mag, 1 / np.sqrt(2), rtol=1e-6)


def test_bandpass_matches_scipy_butterworth():
    filt = design_bandpass(4, 0.1, 70.0, FS)
    ref = signal.butter(4, [0.1, 70.0], btype="bandpass", fs=FS, output="sos")
    f = np.linspace(0.01, 499, 2000)
    _, h_ref = signal.sosfreqz(ref, worN=f, fs=FS)
    np.testing.assert_allclose(np.abs(filt.frequency_response(f, FS)), np.abs(h_ref), atol=1e-9)


def test_bandpass_rejects_dc_and_nyquist_and_passes_midband():
    filt = design_bandpass(4, 0.1, 70.0, FS)
    h = np.abs(filt.frequency_response([0.0, 500.0, 20.0], FS))
    assert h[0] < 1e-3 and h[1] < 1e-3
    assert 0.99 <= h[2] <= 1.01


def test_bandpass_is_stable_with_expected_pole_count():
    filt = design_bandpass(4, 0.1, 70.0, FS)
    assert len(filt.poles()) == 8
    assert filt.is_stable()


@pytest.mark.parametrize("low,high", [(0.1, 600.0), (0.0, 70.0), (80.0, 70.0)])
def test_bandpass_bad_cutoffs(low, high):
    with pytest.raises(InvalidCutoffError):
        design_bandpass(4, low, high, FS)


def test_notch_response():
    filt = design_notch(60.0, 30.0, FS)
    h = np.abs(filt.frequency_response([60.0, 10.0], FS))
    assert h[0] < 0.01
    assert h[1] > 0.99


def test_notch_matches_scipy():
    b, a = signal.iirnotch(60.0, 30.0, fs=FS)
    filt = design_notch(60.0, 30.0, FS)
    np.testing.assert_allclose(filt.to_sos()[0], np.concatenate([b, a]), atol=1e-12)


def test_notch_removes_60hz_sine_in_time_domain():
    t = np.arange(4000) / FS
    x = np.sin(2 * np.pi * 60 * t)
    y = apply_iir(design_notch(60.0, 30.0, FS), x)
    # the notch bandwidth is 2 Hz, so its transient lasts a few hundred ms
    ratio = np.sqrt(np.mean(y[2000:] ** 2) / np.mean(x[2000:] ** 2))
    assert ratio < 0.02
    assert 20 * np.log10(ratio) < -34


def test_coefficient_table_lists_every_section():
    filt = design_bandpass()
    assert len(filt.coefficient_table().splitlines()) == 2 + len(filt.sections)


# ---------------------------------------------------------------- filtering


def test_identity_filter_is_bit_exact():
    x = np.random.default_rng(0).standard_normal(257)
    assert np.array_equal(apply_iir(IirFilter.identity(), x), x)


def test_zero_in_zero_out():
    assert not np.any(apply_iir(design_bandpass(), np.zeros(500)))


def test_empty_signal_rejected():
    with pytest.raises(InvalidInputError):
        apply_iir(design_notch(), np.zeros(0))


def test_apply_iir_matches_reference_loop():
    filt = design_bandpass(4, 0.1, 70.0, FS)
    x = np.random.default_rng(1).standard_normal(600)
    np.testing.assert_allclose(apply_iir(filt, x), df2t_reference(filt.sections, x), rtol=1e-9, atol=1e-12)


def test_impulse_response_dft_matches_transfer_function():
    filt = design_notch(60.0, 30.0, FS)
    n = 20000
    imp = np.zeros(n)
    imp[0] = 1.0
    h = np.fft.rfft(apply_iir(filt, imp))
    f = np.fft.rfftfreq(n, 1 / FS)
    np.testing.assert_allclose(h, filt.frequency_response(f, FS), atol=1e-6)


def test_filtering_runs_along_last_axis_per_channel():
    filt = design_bandpass()
    x = np.random.default_rng(2).standard_normal((3, 400))
    y = apply_iir(filt, x)
    for c in range(3):
        np.testing.assert_allclose(y[c], apply_iir(filt, x[c]))


def test_zero_phase_has_no_delay():
    filt = design_bandpass(4, 0.1, 70.0, FS)
    t = np.arange(4000) / FS
    x = np.sin(2 * np.pi * 10 * t)
    y = apply_iir(filt, x, zero_phase=True)
    mid = slice(1500, 2500)
    assert np.corrcoef(x[mid], y[mid])[0, 1] > 0.999


# ---------------------------------------------------------------- ICA


def _two_sources(n=10000):
    t = np.arange(n) / FS
    s = np.vstack([np.sin(2 * np.pi * 3 * t), signal.sawtooth(2 * np.pi * 7.3 * t)])
    A = np.array([[1.0, 0.6], [0.4, 1.0]])
    return s, A, A @ s


def test_fastica_recovers_sources_up_to_permutation_and_sign():
    s, _, x = _two_sources()
    model = fit_fastica(x, seed=0)
    rec = model.sources(x)
    corr = np.abs(np.corrcoef(np.vstack([s, rec]))[:2, 2:])
    assert corr.max(axis=1).min() > 0.95
    assert sorted(corr.argmax(axis=1)) == [0, 1]
    assert model.converged.all()


def test_fastica_on_white_independent_data_is_signed_permutation():
    rng = np.random.default_rng(3)
    s = rng.uniform(-np.sqrt(3), np.sqrt(3), (3, 20000))
    W = fit_fastica(s, seed=1).unmixing
    np.testing.assert_allclose(np.abs(W).max(axis=1), 1.0, atol=0.05)
    assert sorted(np.abs(W).argmax(axis=1)) == [0, 1, 2]


def test_fastica_too_many_components():
    with pytest.raises(ValueError):
        fit_fastica(np.random.default_rng(0).standard_normal((2, 100)), n_components=3)


def test_fastica_flags_non_convergence():
    _, _, x = _two_sources()
    with pytest.warns(Warning):
        model = fit_fastica(x, max_iter=1, tol=1e-12)
    assert not model.converged.all()


def test_remove_nothing_is_identity():
    _, _, x = _two_sources()
    model = fit_fastica(x)
    np.testing.assert_allclose(remove_components(model, x, []), x, atol=1e-6)


def test_remove_everything_leaves_channel_means():
    _, _, x = _two_sources()
    x = x + np.array([[2.0], [-1.0]])
    model = fit_fastica(x)
    out = remove_components(model, x, [0, 1])
    np.testing.assert_allclose(out, np.repeat(x.mean(axis=1, keepdims=True), x.shape[1], axis=1), atol=1e-9)


def test_remove_one_source_keeps_the_other():
    s, A, x = _two_sources()
    model = fit_fastica(x)
    rec = model.sources(x)
    b_comp = int(np.argmax(np.abs([np.corrcoef(rec[i], s[1])[0, 1] for i in range(2)])))
    out = remove_components(model, x, [b_comp])
    only_a = np.outer(A[:, 0], s[0])
    for c in range(2):
        assert np.corrcoef(out[c], only_a[c])[0, 1] > 0.95


def test_remove_out_of_range_component():
    _, _, x = _two_sources(2000)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit_fastica(x)
    with pytest.raises(InvalidComponentError):
        remove_components(model, x, [2])


# ---------------------------------------------------------------- STFT


def test_hann_is_periodic():
    w = hann(8)
    assert w[0] == 0.0 and w[4] == pytest.approx(1.0)
    np.testing.assert_allclose(w, signal.get_window("hann", 8))


def test_frame_count():
    assert n_stft_frames(100, 400, 160) == 1
    assert n_stft_frames(400, 400, 160) == 1
    assert n_stft_frames(401, 400, 160) == 2
    assert stft(np.zeros(16000), 400, 160).n_frames == 99


def test_sine_peaks_at_expected_bin():
    t = np.arange(16000) / 16000
    mag = stft(np.sin(2 * np.pi * 1000 * t), 400, 160, 16000).magnitude()
    assert np.all(mag.argmax(axis=1) == 25)


def test_zero_signal_zero_spectrogram():
    assert not np.any(stft(np.zeros(1000), 256, 64).frames)


def test_short_signal_gives_one_padded_frame():
    spec = stft(np.ones(10), 64, 16)
    assert spec.n_frames == 1


def test_single_frame_inverse_is_windowed_ifft():
    x = np.random.default_rng(0).standard_normal(64)
    spec = stft(x, 64, 16)
    out = istft(spec)
    w = hann(64)
    cover = w > 1e-5
    np.testing.assert_allclose(out[cover], x[cover], atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(length=st.integers(300, 3000), n_fft=st.sampled_from([64, 128, 256]), seed=st.integers(0, 2**31))
def test_istft_inverts_stft_on_interior(length, n_fft, seed):
    x = np.random.default_rng(seed).standard_normal(length)
    hop = n_fft // 4
    y = istft(stft(x, n_fft, hop), length=length)
    assert len(y) == length
    inner = slice(n_fft, length - n_fft)
    err = np.linalg.norm(y[inner] - x[inner]) / max(np.linalg.norm(x[inner]), 1e-12)
    assert err < 1e-6
