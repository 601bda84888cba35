"""Spectrogram front-ends: STFT power, MEL / GAM / CQT filterbanks, deltas.

All three kinds share one STFT (4096-point FFT, 2048-sample Hann window, hop
326, centre reflect padding) and differ only in the filterbank applied to its
power spectrogram. A 1-second 44.1 kHz clip yields 136 frames; the central 132
are kept, and the delta stage crops those to 128, giving 128 x 128 x 3 tensors
(static, delta, delta-delta).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.signal import get_window
from scipy.special import ndtr
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, CorruptFileError, FilterbankError, ShapeError
from .validation import as_clip_batch

SAMPLE_RATE = 44100
LOG_EPS = 1e-10
N_FRAMES_KEPT = 132
N_FRAMES_OUT = 128
DELTA_HALF_WIDTH = 4
CQT_BINS_PER_OCTAVE = 16
CQT_FMIN = 32.70319566257483  # C1


class Kind(str, Enum):
    MEL = "MEL"
    GAM = "GAM"
    CQT = "CQT"

    @property
    def code(self) -> int:
        return list(Kind).index(self)


KINDS = (Kind.MEL, Kind.GAM, Kind.CQT)

_DEFAULT_RANGE = {Kind.MEL: (0.0, 22050.0), Kind.GAM: (50.0, 22050.0), Kind.CQT: (CQT_FMIN, 22050.0)}


@dataclass(frozen=True)
class SpectrogramConfig:
    kind: Kind = Kind.MEL
    n_fft: int = 4096
    window_length: int = 2048
    hop_length: int = 326
    n_filters: int = 128
    fmin: float | None = None
    fmax: float | None = None
    sample_rate: int = SAMPLE_RATE

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        lo, hi = _DEFAULT_RANGE[self.kind]
        if self.fmin is None:
            object.__setattr__(self, "fmin", lo)
        if self.fmax is None:
            object.__setattr__(self, "fmax", hi)
        if not 1 <= self.window_length <= self.n_fft:
            raise ConfigError("window_length must be in [1, n_fft]")
        if self.hop_length < 1 or self.n_filters < 1:
            raise ConfigError("hop_length and n_filters must be >= 1")
        if not (self.fmin < self.fmax <= self.sample_rate / 2):
            raise ConfigError(f"need fmin < fmax <= sample_rate/2, got {self.fmin}, {self.fmax}")

    @property
    def fft_frequencies(self):
        return np.arange(self.n_fft // 2 + 1) * (self.sample_rate / self.n_fft)


@dataclass(frozen=True)
class FilterBank:
    weights: np.ndarray
    center_frequencies: np.ndarray
    kind: Kind
    # nominal bandwidth per filter in Hz (CQT only)
    bandwidths: np.ndarray | None = field(default=None)


# -- STFT -------------------------------------------------------------------

def stft_power(samples, config: SpectrogramConfig, sample_rate=SAMPLE_RATE, crop=True):
    """Power spectrogram ``(n_fft/2 + 1, frames)`` of Hann-windowed frames.

    Frame ``t`` is centred on sample ``t * hop`` (reflect padding). With
    ``crop`` the central ``N_FRAMES_KEPT`` frames are returned.
    """
    if sample_rate != config.sample_rate:
        raise ConfigError(f"expected {config.sample_rate} Hz audio, got {sample_rate} Hz")
    y = np.asarray(samples, dtype=np.float64)
    n_fft, hop = config.n_fft, config.hop_length
    pad = n_fft // 2
    if len(y) <= pad:
        raise ShapeError(f"clip of {len(y)} samples is too short for reflect padding of {pad}")
    y = np.pad(y, pad, mode="reflect")
    win = _padded_window(config.window_length, n_fft)
    n_frames = 1 + (len(y) - n_fft) // hop
    frames = np.lib.stride_tricks.sliding_window_view(y, n_fft)[::hop][:n_frames]
    spec = np.fft.rfft(frames * win, axis=1)
    power = (spec.real**2 + spec.imag**2).T
    if crop:
        if n_frames < N_FRAMES_KEPT:
            raise ShapeError(f"{n_frames} frames is fewer than the {N_FRAMES_KEPT} kept")
        start = (n_frames - N_FRAMES_KEPT) // 2
        power = power[:, start:start + N_FRAMES_KEPT]
    return np.ascontiguousarray(power)


def _padded_window(window_length, n_fft):
    win = get_window("hann", window_length, fftbins=True)
    left = (n_fft - window_length) // 2
    return np.pad(win, (left, n_fft - window_length - left))


def onesided_energy(power_column, n_fft):
    """Time-domain energy of a frame from its one-sided power spectrum.

    Interior bins are counted twice (they stand for their negative-frequency
    mirror); DC and Nyquist once. Divides by ``n_fft`` per Parseval.
    """
    p = np.asarray(power_column, dtype=np.float64)
    return (p[0] + 2.0 * p[1:-1].sum() + p[-1]) / n_fft


# -- filterbanks --------------------------------------------------------------

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def build_mel_filterbank(config: SpectrogramConfig) -> FilterBank:
    """HTK-mel triangles with unit area (height ``2 / (upper - lower)``)."""
    if config.kind is not Kind.MEL:
        raise ConfigError(f"mel filterbank needs kind MEL, got {config.kind}")
    freqs = config.fft_frequencies
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax), config.n_filters + 2))
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    weights = np.maximum(0.0, np.minimum(rising, falling)) * (2.0 / (upper - lower))
    _check_rows(weights, "mel")
    return FilterBank(weights, edges[1:-1].copy(), Kind.MEL)


def erb_bandwidth(f):
    """Equivalent rectangular bandwidth in Hz (Glasberg & Moore)."""
    return 24.7 * (4.37 * np.asarray(f, dtype=np.float64) / 1000.0 + 1.0)


def hz_to_erb_number(f):
    return 21.4 * np.log10(1.0 + 0.00437 * np.asarray(f, dtype=np.float64))


def erb_number_to_hz(e):
    return (10.0 ** (np.asarray(e, dtype=np.float64) / 21.4) - 1.0) / 0.00437


def gammatone_response(freqs, center, order=4):
    """Closed-form magnitude response of a gammatone filter (peak 1 at ``center``)."""
    b = 1.019 * erb_bandwidth(center)
    return (1.0 + ((np.asarray(freqs) - center) / b) ** 2) ** (-order / 2.0)


def build_gammatone_filterbank(config: SpectrogramConfig) -> FilterBank:
    """4th-order gammatone magnitudes on the FFT grid, ERB-spaced, peak-normalised."""
    if config.kind is not Kind.GAM:
        raise ConfigError(f"gammatone filterbank needs kind GAM, got {config.kind}")
    freqs = config.fft_frequencies
    centers = erb_number_to_hz(
        np.linspace(hz_to_erb_number(config.fmin), hz_to_erb_number(config.fmax), config.n_filters)
    )
    # guard against rounding pushing the end points outside the range
    centers = np.clip(centers, config.fmin, config.fmax)
    weights = gammatone_response(freqs[None, :], centers[:, None])
    _check_rows(weights, "gammatone")
    weights /= weights.max(axis=1, keepdims=True)
    return FilterBank(weights, centers, Kind.GAM)


def build_cqt_filterbank(config: SpectrogramConfig, bins_per_octave=CQT_BINS_PER_OCTAVE) -> FilterBank:
    """Constant-Q kernels applied to the STFT power (a pseudo-CQT).

    Each kernel is a Gaussian with full width at half maximum equal to
    ``center / Q``, integrated over every FFT bin's extent so that kernels
    narrower than a bin still land on the bin containing their centre.
    Rows are L1-normalised.
    """
    if config.kind is not Kind.CQT:
        raise ConfigError(f"CQT filterbank needs kind CQT, got {config.kind}")
    centers = config.fmin * 2.0 ** (np.arange(config.n_filters) / bins_per_octave)
    if centers[-1] > config.fmax:
        raise FilterbankError(f"top CQT centre {centers[-1]:.1f} Hz exceeds fmax {config.fmax} Hz")
    q = 1.0 / (2.0 ** (1.0 / bins_per_octave) - 1.0)
    bandwidths = centers / q
    sigma = bandwidths / (2.0 * np.sqrt(2.0 * np.log(2.0)))
    freqs = config.fft_frequencies
    half = config.sample_rate / config.n_fft / 2.0
    lo = (freqs[None, :] - half - centers[:, None]) / sigma[:, None]
    hi = (freqs[None, :] + half - centers[:, None]) / sigma[:, None]
    weights = ndtr(hi) - ndtr(lo)
    _check_rows(weights, "cqt")
    weights /= weights.sum(axis=1, keepdims=True)
    return FilterBank(weights, centers, Kind.CQT, bandwidths)


def _check_rows(weights, label):
    empty = np.flatnonzero(~(weights > 0).any(axis=1))
    if empty.size:
        raise FilterbankError(f"{label} filterbank has empty rows {empty.tolist()[:5]}; too many filters for the FFT size")


_BUILDERS = {Kind.MEL: build_mel_filterbank, Kind.GAM: build_gammatone_filterbank, Kind.CQT: build_cqt_filterbank}
_BANK_CACHE: dict = {}


def build_filterbank(config: SpectrogramConfig) -> FilterBank:
    bank = _BANK_CACHE.get(config)
    if bank is None:
        bank = _BANK_CACHE[config] = _BUILDERS[config.kind](config)
    return bank


def apply_filterbank(power_spec, bank: FilterBank):
    """Filterbank energies followed by ``log(x + 1e-10)``."""
    power_spec = np.asarray(power_spec, dtype=np.float64)
    if power_spec.ndim != 2 or bank.weights.shape[1] != power_spec.shape[0]:
        raise ShapeError(f"filterbank {bank.weights.shape} cannot apply to spectrogram {power_spec.shape}")
    return np.log(bank.weights @ power_spec + LOG_EPS)


# -- deltas -------------------------------------------------------------------

def delta(x, half_width=DELTA_HALF_WIDTH):
    """Regression delta along the last axis with edge-replicated padding."""
    n = np.arange(1, half_width + 1)
    denom = 2.0 * np.sum(n * n)
    xp = np.pad(x, [(0, 0)] * (x.ndim - 1) + [(half_width, half_width)], mode="edge")
    t = x.shape[-1]
    out = np.zeros_like(x, dtype=np.float64)
    for k in n:
        out += k * (xp[..., half_width + k:half_width + k + t] - xp[..., half_width - k:half_width - k + t])
    return out / denom


def add_deltas(logspec):
    """Stack static, delta and delta-delta and crop time 132 -> 128."""
    logspec = np.asarray(logspec, dtype=np.float64)
    if logspec.shape != (128, N_FRAMES_KEPT):
        raise ShapeError(f"add_deltas expects a 128 x {N_FRAMES_KEPT} matrix, got {logspec.shape}")
    d1 = delta(logspec)
    d2 = delta(d1)
    crop = (N_FRAMES_KEPT - N_FRAMES_OUT) // 2
    stack = np.stack([logspec, d1, d2], axis=-1)
    return stack[:, crop:crop + N_FRAMES_OUT, :]


# -- composition ------------------------------------------------------------

@dataclass(frozen=True)
class Standardization:
    """Per-channel scalar statistics of the TRAIN split for one kind."""

    mean: tuple[float, float, float]
    std: tuple[float, float, float]

    def apply(self, features):
        mean = np.asarray(self.mean)
        std = np.asarray(self.std)
        return (features - mean) / std

    @classmethod
    def fit(cls, features):
        f = np.asarray(features, dtype=np.float64)
        mean = f.mean(axis=(0, 1, 2))
        std = f.std(axis=(0, 1, 2))
        std = np.where(std > 0, std, 1.0)
        return cls(tuple(float(v) for v in mean), tuple(float(v) for v in std))


def featurize(samples, kind, sample_rate=SAMPLE_RATE, standardization: Standardization | None = None):
    """1-second clip -> 128 x 128 x 3 float32 tensor for ``kind``."""
    config = SpectrogramConfig(Kind(kind))
    power = stft_power(samples, config, sample_rate)
    logspec = apply_filterbank(power, build_filterbank(config))
    feats = add_deltas(logspec)
    if standardization is not None:
        feats = standardization.apply(feats)
    return feats.astype(np.float32)


class SpectrogramFeaturizer(TransformerMixin, BaseEstimator):
    """Audio clips -> standardized ``(n, 128, 128, 3)`` feature tensors.

    ``fit`` learns per-channel mean/std from the clips it sees (the TRAIN
    split); ``transform`` applies them. ``X`` is an ``(n, n_samples)`` array
    or a sequence of :class:`~kdasc.dataset.AudioClip`.
    """

    def __init__(self, kind="MEL", standardize=True):
        self.kind = kind
        self.standardize = standardize

    def _raw(self, X):
        samples, sr = as_clip_batch(X)
        return np.stack([featurize(s, self.kind, sr) for s in samples]) if len(samples) else np.zeros((0, 128, 128, 3), np.float32)

    def fit(self, X, y=None):
        self._fit_raw(self._raw(X))
        return self

    def _fit_raw(self, raw):
        self.standardization_ = Standardization.fit(raw) if self.standardize else None
        self.n_features_in_ = raw.shape[1] if raw.ndim > 1 else 0
        return raw

    def transform(self, X):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "standardization_")
        return self.apply_standardization(self._raw(X))

    def fit_transform(self, X, y=None, **fit_params):
        raw = self._fit_raw(self._raw(X))
        return self.apply_standardization(raw)

    def apply_standardization(self, raw):
        if self.standardization_ is None:
            return raw.astype(np.float32)
        return self.standardization_.apply(raw).astype(np.float32)


# -- feature cache ----------------------------------------------------------

FEATURE_MAGIC = b"KDASCFT\x00"
FEATURE_VERSION = 1
FEATURE_SHAPE = (128, 128, 3)
_HEADER = struct.Struct("<8sHBBI")


def write_feature_file(path, tensor, kind):
    """16-byte header then float32 little-endian values in (freq, time, channel) order."""
    t = np.asarray(tensor)
    if t.shape != FEATURE_SHAPE:
        raise ShapeError(f"feature tensor must be {FEATURE_SHAPE}, got {t.shape}")
    payload = np.ascontiguousarray(t, dtype="<f4").tobytes()
    header = _HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, Kind(kind).code, 0, t.size)
    Path(path).write_bytes(header + payload)
    return hashlib.sha256(header + payload).hexdigest()


def read_feature_file(path):
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise CorruptFileError(f"{path}: truncated feature header", offset=len(data))
    magic, version, code, _, count = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise CorruptFileError(f"{path}: bad feature-file magic", offset=0)
    if version != FEATURE_VERSION:
        raise CorruptFileError(f"{path}: unsupported feature-file version {version}", offset=8)
    expected = _HEADER.size + 4 * count
    if len(data) != expected or count != int(np.prod(FEATURE_SHAPE)):
        raise CorruptFileError(f"{path}: expected {expected} bytes, found {len(data)}", offset=len(data))
    values = np.frombuffer(data, dtype="<f4", offset=_HEADER.size).reshape(FEATURE_SHAPE)
    return values.astype(np.float32), KINDS[code]
