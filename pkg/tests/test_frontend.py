import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import resolvable_filters, tone_argmax_failures
from kdasc.dataset import synth_clip
from kdasc.exceptions import ConfigError, CorruptFileError, FilterbankError, ShapeError
from kdasc.frontend import (
    CQT_BINS_PER_OCTAVE,
    KINDS,
    LOG_EPS,
    FilterBank,
    Kind,
    SpectrogramConfig,
    SpectrogramFeaturizer,
    Standardization,
    _padded_window,
    add_deltas,
    apply_filterbank,
    build_cqt_filterbank,
    build_filterbank,
    delta,
    erb_bandwidth,
    featurize,
    gammatone_response,
    hz_to_erb_number,
    onesided_energy,
    read_feature_file,
    stft_power,
    write_feature_file,
)

SR = 44100


def tone(freq, seconds=1.0, amp=1.0):
    t = np.arange(int(SR * seconds)) / SR
    return amp * np.sin(2 * np.pi * freq * t)


# -- STFT ---------------------------------------------------------------------

def test_frame_count_and_crop():
    cfg = SpectrogramConfig()
    full = stft_power(np.zeros(SR), cfg, crop=False)
    assert full.shape == (2049, 136)
    assert stft_power(np.zeros(SR), cfg).shape == (2049, 132)


def test_zero_clip_gives_zero_power():
    assert not stft_power(np.zeros(SR), SpectrogramConfig()).any()


def test_sine_peaks_at_expected_bin():
    power = stft_power(tone(1000.0), SpectrogramConfig())
    assert np.all(power.argmax(axis=0) == round(1000 * 4096 / SR))


def test_single_frame_matches_direct_dft_and_parseval():
    cfg = SpectrogramConfig()
    y = np.random.default_rng(0).standard_normal(SR)
    power = stft_power(y, cfg, crop=False)
    t = 60
    padded = np.pad(y, 2048, mode="reflect")
    frame = padded[t * 326:t * 326 + 4096] * _padded_window(2048, 4096)
    direct = np.abs(np.fft.fft(frame)[:2049]) ** 2
    np.testing.assert_allclose(power[:, t], direct, rtol=1e-9, atol=1e-9)
    energy = np.sum(frame**2)
    assert abs(onesided_energy(power[:, t], 4096) - energy) / energy < 1e-6


def test_wrong_sample_rate_is_config_error():
    with pytest.raises(ConfigError):
        stft_power(np.zeros(16000), SpectrogramConfig(), sample_rate=16000)


def test_config_validation():
    with pytest.raises(ConfigError):
        SpectrogramConfig(window_length=8192)
    with pytest.raises(ConfigError):
        SpectrogramConfig(fmin=100.0, fmax=50.0)
    with pytest.raises(ConfigError):
        SpectrogramConfig(hop_length=0)


# -- filterbanks ----------------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_bank_invariants(kind):
    cfg = SpectrogramConfig(kind)
    bank = build_filterbank(cfg)
    assert bank.weights.shape == (128, 2049)
    assert np.all(bank.weights >= 0)
    assert np.all((bank.weights > 0).any(axis=1))
    c = bank.center_frequencies
    assert np.all(np.diff(c) > 0) and c[0] >= cfg.fmin and c[-1] <= cfg.fmax


@pytest.mark.parametrize("kind", KINDS)
def test_tone_localization(kind):
    bank = build_filterbank(SpectrogramConfig(kind))
    assert len(resolvable_filters(bank)) > 50
    assert tone_argmax_failures(bank) == []


def test_mel_rows_have_unit_area():
    bank = build_filterbank(SpectrogramConfig(Kind.MEL))
    # continuous triangles have area 1; the bin-sampled sum approximates it times 1/df
    df = SR / 4096
    wide = np.flatnonzero(np.diff(bank.center_frequencies, prepend=0) > 4 * df)
    np.testing.assert_allclose(bank.weights[wide].sum(axis=1) * df, 1.0, rtol=0.05)


def test_gammatone_erb_spacing_and_peak():
    bank = build_filterbank(SpectrogramConfig(Kind.GAM))
    e = hz_to_erb_number(bank.center_frequencies)
    np.testing.assert_allclose(np.diff(e), np.diff(e)[0], atol=1e-9)
    np.testing.assert_allclose(bank.weights.max(axis=1), 1.0, atol=1e-9)
    c = bank.center_frequencies
    erb = erb_bandwidth(c)
    assert np.all(gammatone_response(c, c) >= gammatone_response(c + 2 * erb, c))
    assert np.all(gammatone_response(c, c) >= gammatone_response(c - 2 * erb, c))


def test_cqt_geometry():
    bank = build_filterbank(SpectrogramConfig(Kind.CQT))
    c, bw = bank.center_frequencies, bank.bandwidths
    ratios = c[1:] / c[:-1]
    np.testing.assert_allclose(ratios, ratios[0], rtol=1e-9)
    np.testing.assert_allclose(bw / c, (bw / c)[0], rtol=1e-9)
    B = CQT_BINS_PER_OCTAVE
    np.testing.assert_allclose(c[B:], 2 * c[:-B], rtol=1e-6)
    np.testing.assert_allclose(bank.weights.sum(axis=1), 1.0, rtol=1e-12)


def test_cqt_top_above_fmax_is_error():
    with pytest.raises(FilterbankError):
        build_cqt_filterbank(SpectrogramConfig(Kind.CQT, fmax=4000.0))


def test_too_many_mel_filters_leaves_empty_rows():
    with pytest.raises(FilterbankError):
        build_filterbank(SpectrogramConfig(Kind.MEL, n_fft=256, window_length=256, n_filters=128))


# -- apply_filterbank -----------------------------------------------------------------

def test_apply_zero_spectrogram():
    bank = build_filterbank(SpectrogramConfig(Kind.MEL))
    np.testing.assert_array_equal(apply_filterbank(np.zeros((2049, 3)), bank), np.log(LOG_EPS))


def test_apply_single_bin_row():
    w = np.zeros((1, 6))
    w[0, 2] = 1
    spec = np.random.default_rng(1).random((6, 4))
    bank = FilterBank(w, np.array([1.0]), Kind.MEL)
    np.testing.assert_allclose(apply_filterbank(spec, bank), np.log(spec[2:3] + LOG_EPS))


def test_apply_matches_naive_triple_loop():
    rng = np.random.default_rng(2)
    spec, w = rng.random((5, 3)), rng.random((4, 5))
    naive = np.zeros((4, 3))
    for i in range(4):
        for j in range(3):
            for k in range(5):
                naive[i, j] += w[i, k] * spec[k, j]
    out = apply_filterbank(spec, FilterBank(w, np.arange(1.0, 5.0), Kind.MEL))
    np.testing.assert_allclose(out, np.log(naive + LOG_EPS), rtol=1e-12)
    with pytest.raises(ShapeError):
        apply_filterbank(spec.T, FilterBank(w, np.arange(1.0, 5.0), Kind.MEL))


@pytest.mark.parametrize("kind", KINDS)
def test_filterbank_linearity_before_log(kind):
    bank = build_filterbank(SpectrogramConfig(kind))
    rng = np.random.default_rng(3)
    a, b = rng.random((2049, 2)), rng.random((2049, 2))
    lin = lambda s: np.exp(apply_filterbank(s, bank)) - LOG_EPS  # noqa: E731
    np.testing.assert_allclose(lin(a + b), lin(a) + lin(b), rtol=1e-6)


# -- deltas ---------------------------------------------------------------------------------

def test_delta_of_constant_is_zero():
    out = add_deltas(np.full((128, 132), 3.25))
    assert not out[..., 1].any() and not out[..., 2].any()


def test_delta_of_ramp_is_exact_on_interior():
    # a dyadic slope keeps every intermediate exactly representable
    a = 0.375
    x = np.tile(a * np.arange(132.0), (128, 1))
    d1 = delta(x)
    d2 = delta(d1)
    # edge replication only reaches 4 frames in for delta, 8 for delta-delta
    assert np.all(d1[:, 4:-4] == a)
    assert np.all(d2[:, 8:-8] == 0.0)
    out = add_deltas(x)
    assert np.all(out[:, 2:-2, 1] == a)
    assert np.all(out[:, 6:-6, 2] == 0.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_delta_antisymmetry(seed):
    x = np.random.default_rng(seed).standard_normal((128, 132))
    np.testing.assert_allclose(delta(x[:, ::-1]), -delta(x)[:, ::-1], atol=1e-12)


def test_add_deltas_wrong_shape():
    with pytest.raises(ShapeError):
        add_deltas(np.zeros((128, 128)))


# -- featurize ----------------------------------------------------------------------------

@pytest.mark.parametrize("kind", KINDS)
def test_featurize_zero_clip(kind):
    f = featurize(np.zeros(SR), kind)
    assert f.shape == (128, 128, 3) and f.dtype == np.float32
    assert np.all(f[..., 0] == f[0, 0, 0])
    assert not f[..., 1:].any()


@pytest.mark.parametrize("kind", KINDS)
def test_featurize_white_noise_is_finite_and_deterministic(kind):
    y = np.random.default_rng(4).uniform(-1, 1, SR)
    a, b = featurize(y, kind), featurize(y, kind)
    assert np.isfinite(a).all() and a.tobytes() == b.tobytes()


@settings(max_examples=10, deadline=None)
@given(st.integers(SR, SR + 325), st.sampled_from(KINDS))
def test_featurize_shape_contract(n, kind):
    y = np.random.default_rng(n).uniform(-0.5, 0.5, n)
    assert featurize(y, kind).shape == (128, 128, 3)


def test_synthetic_classes_are_separated():
    a = featurize(synth_clip(0, np.random.default_rng(0)), Kind.MEL)
    b = featurize(synth_clip(9, np.random.default_rng(0)), Kind.MEL)
    assert np.linalg.norm(a - b) > 0


def test_standardization_fit_and_apply():
    x = np.random.default_rng(5).standard_normal((4, 128, 128, 3)) * [1, 2, 3] + [5, 0, -1]
    st_ = Standardization.fit(x)
    z = st_.apply(x)
    np.testing.assert_allclose(z.mean(axis=(0, 1, 2)), 0, atol=1e-9)
    np.testing.assert_allclose(z.std(axis=(0, 1, 2)), 1, atol=1e-9)


def test_featurizer_estimator_uses_train_statistics():
    rng = np.random.default_rng(6)
    train = rng.uniform(-0.5, 0.5, (3, SR))
    test = rng.uniform(-0.1, 0.1, (2, SR))
    fz = SpectrogramFeaturizer("GAM").fit(train)
    assert fz.get_params() == {"kind": "GAM", "standardize": True}
    out = fz.transform(test)
    raw = np.stack([featurize(t, "GAM") for t in test])
    np.testing.assert_allclose(out, fz.standardization_.apply(raw).astype(np.float32))
    ft = SpectrogramFeaturizer("GAM").fit_transform(train)
    np.testing.assert_allclose(ft.mean(axis=(0, 1, 2)), 0, atol=1e-4)


# -- feature files --------------------------------------------------------------------------

def test_feature_file_roundtrip_and_corruption(tmp_path):
    t = np.random.default_rng(7).standard_normal((128, 128, 3)).astype(np.float32)
    path = tmp_path / "x.feat"
    digest = write_feature_file(path, t, Kind.CQT)
    assert len(digest) == 64
    back, kind = read_feature_file(path)
    assert kind is Kind.CQT and back.tobytes() == t.tobytes()
    data = path.read_bytes()
    path.write_bytes(data[:-10])
    with pytest.raises(CorruptFileError, match="offset"):
        read_feature_file(path)
    path.write_bytes(b"XXXXXXXX" + data[8:])
    with pytest.raises(CorruptFileError):
        read_feature_file(path)
    with pytest.raises(ShapeError):
        write_feature_file(path, t[:5], Kind.MEL)
