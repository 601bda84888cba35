"""Audio ingestion, dataset manifests and a synthetic desk-scale dataset."""

from __future__ import annotations

import csv
import io
import struct
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np
from scipy.io import wavfile

from .exceptions import (
    DuplicateEntryError,
    EmptyInputError,
    SchemaError,
    UnsupportedCodecError,
    ValidationError,
    WavFormatError,
)

CLASS_NAMES = (
    "airport",
    "shopping_mall",
    "metro_station",
    "street_pedestrian",
    "public_square",
    "street_traffic",
    "tram",
    "bus",
    "metro",
    "park",
)

CITIES = (
    "amsterdam", "barcelona", "helsinki", "lisbon", "london", "lyon",
    "madrid", "milan", "prague", "paris", "stockholm", "vienna",
)


class Device(str, Enum):
    A = "A"
    B = "B"
    C = "C"
    S1 = "S1"
    S2 = "S2"
    S3 = "S3"
    S4 = "S4"
    S5 = "S5"
    S6 = "S6"
    SYNTH = "SYNTH"


class Split(str, Enum):
    TRAIN = "TRAIN"
    EVAL = "EVAL"


@dataclass(frozen=True)
class AudioClip:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=np.float64)
        if s.ndim != 1:
            raise ValidationError(f"clip samples must be 1-D, got shape {s.shape}")
        if not np.all(np.isfinite(s)) or (s.size and np.abs(s).max() > 1.0):
            raise ValidationError("clip samples must be finite and within [-1, 1]")
        if int(self.sample_rate) <= 0:
            raise ValidationError("sample rate must be positive")
        object.__setattr__(self, "samples", s)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate


_INT_SCALE = {np.dtype(np.int16): 32768.0, np.dtype(np.int32): 2147483648.0}


def load_wav(path) -> AudioClip:
    """Read a PCM WAV as a mono clip in [-1, 1].

    Integer PCM is divided by 2**(bits-1) (so 16-bit spans [-1, 1)); 32-bit
    float is taken as is and clipped. Multichannel files are averaged.
    """
    path = Path(path)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", wavfile.WavFileWarning)
        try:
            rate, data = wavfile.read(path)
        except (ValueError, EOFError, struct.error) as exc:
            msg = str(exc)
            if "Unknown wave file format" in msg or "Unsupported bit depth" in msg:
                raise UnsupportedCodecError(f"{path}: {msg}") from exc
            raise WavFormatError(f"{path}: malformed RIFF/WAVE data ({msg})") from exc
    if data.dtype in _INT_SCALE:
        x = data.astype(np.float64) / _INT_SCALE[data.dtype]
    elif data.dtype == np.float32:
        x = np.clip(data.astype(np.float64), -1.0, 1.0)
    else:
        raise UnsupportedCodecError(f"{path}: unsupported sample encoding {data.dtype}")
    if x.ndim == 2:
        x = x.mean(axis=1)
    return AudioClip(x, int(rate))


def write_wav(path, clip: AudioClip):
    """Write 16-bit PCM (inverse of the 1/32768 scaling, saturating at 32767)."""
    q = np.clip(np.round(clip.samples * 32768.0), -32768, 32767).astype("<i2")
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    wavfile.write(path, clip.sample_rate, q)


def segment_clip(clip: AudioClip, segment_seconds=1.0) -> list[AudioClip]:
    """Non-overlapping consecutive segments; the last one is zero-padded."""
    if segment_seconds <= 0:
        raise ValidationError("segment_seconds must be positive")
    n = len(clip.samples)
    if n < 1:
        raise EmptyInputError("cannot segment an empty clip")
    seg = int(round(segment_seconds * clip.sample_rate))
    if seg < 1:
        raise ValidationError("segment shorter than one sample")
    n_seg = -(-n // seg)
    padded = np.zeros(n_seg * seg)
    padded[:n] = clip.samples
    return [AudioClip(padded[i * seg:(i + 1) * seg], clip.sample_rate) for i in range(n_seg)]


# -- manifests ---------------------------------------------------------------

MANIFEST_FIELDS = ("clip_path", "scene_label", "device_id", "city", "split")


@dataclass(frozen=True)
class ManifestEntry:
    clip_path: str
    scene_label: str
    device_id: Device
    city: str
    split: Split

    def __post_init__(self):
        if self.scene_label not in CLASS_NAMES:
            raise SchemaError(f"unknown scene label {self.scene_label!r}")
        object.__setattr__(self, "device_id", Device(self.device_id))
        object.__setattr__(self, "split", Split(self.split))

    @property
    def label_index(self) -> int:
        return CLASS_NAMES.index(self.scene_label)


@dataclass
class DatasetManifest:
    entries: list[ManifestEntry] = field(default_factory=list)
    class_names: tuple[str, ...] = CLASS_NAMES
    root: Path | None = field(default=None, compare=False)

    def __post_init__(self):
        self.class_names = tuple(self.class_names)
        if self.class_names != CLASS_NAMES:
            raise SchemaError("class names must be the fixed 10-class list in canonical order")
        seen = set()
        for e in self.entries:
            if e.clip_path in seen:
                raise DuplicateEntryError(f"clip_path {e.clip_path!r} appears more than once")
            seen.add(e.clip_path)

    def split(self, split) -> list[ManifestEntry]:
        split = Split(split)
        return [e for e in self.entries if e.split is split]

    def labels(self, split) -> np.ndarray:
        return np.array([e.label_index for e in self.split(split)], dtype=np.int64)

    def resolve(self, entry: ManifestEntry) -> Path:
        p = Path(entry.clip_path)
        return p if p.is_absolute() or self.root is None else self.root / p


def save_manifest(manifest: DatasetManifest, path):
    buf = io.StringIO()
    writer = csv.writer(buf, delimiter="\t", lineterminator="\n")
    writer.writerow(MANIFEST_FIELDS)
    for e in manifest.entries:
        writer.writerow([e.clip_path, e.scene_label, e.device_id.value, e.city, e.split.value])
    Path(path).write_text(buf.getvalue(), encoding="utf-8")


def load_manifest(path) -> DatasetManifest:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    reader = csv.reader(io.StringIO(text), delimiter="\t")
    rows = list(reader)
    if not rows or tuple(rows[0]) != MANIFEST_FIELDS:
        raise SchemaError(f"{path}: header must be {' '.join(MANIFEST_FIELDS)}")
    entries = []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(MANIFEST_FIELDS):
            raise SchemaError(f"{path}:{lineno}: expected {len(MANIFEST_FIELDS)} fields, got {len(row)}")
        try:
            entries.append(ManifestEntry(*row))
        except (SchemaError, ValueError) as exc:
            raise SchemaError(f"{path}:{lineno}: {exc}") from None
    try:
        return DatasetManifest(entries, CLASS_NAMES, root=path.parent)
    except DuplicateEntryError as exc:
        raise DuplicateEntryError(f"{path}: {exc}") from None


# -- synthetic dataset ---------------------------------------------------------

@dataclass(frozen=True)
class SceneTexture:
    """Acoustic recipe for one synthetic class."""

    band_center: float  # Hz, centre of the band-passed noise
    am_rate: float  # Hz, amplitude-modulation rate
    tone: float  # Hz, stationary tonal component
    color: float  # spectral slope exponent of the background noise (0 white, 1 pink, 2 brown)


# Noise bands are log-spaced between 150 Hz and 6 kHz so every kind (the CQT
# tops out near 8 kHz) sees them; AM rates and tones are shuffled so that no
# single cue orders the classes.
SCENE_TEXTURES = tuple(
    SceneTexture(float(b), float(a), float(t), float(c))
    for b, a, t, c in zip(
        np.geomspace(150.0, 6000.0, 10),
        (2.0, 11.0, 5.0, 17.0, 3.0, 8.0, 14.0, 1.0, 20.0, 6.5),
        (440.0, 2600.0, 180.0, 1200.0, 3500.0, 300.0, 800.0, 5200.0, 120.0, 1800.0),
        (0.0, 1.0, 2.0, 0.5, 1.5, 0.0, 1.0, 2.0, 0.5, 1.5),
    )
)


def synth_clip(label: int, rng: np.random.Generator, sample_rate=44100, seconds=1.0) -> np.ndarray:
    tex = SCENE_TEXTURES[label]
    n = int(round(sample_rate * seconds))
    freqs = np.fft.rfftfreq(n, 1.0 / sample_rate)
    f = np.maximum(freqs, 20.0)
    spectrum = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    center = tex.band_center * np.exp(rng.normal(0.0, 0.05))
    band = np.exp(-0.5 * (np.log2(f / center) / 0.25) ** 2)
    background = 0.15 * (f / 1000.0) ** (-tex.color / 2.0)
    noise = np.fft.irfft(spectrum * (band + background), n)
    noise /= np.abs(noise).max() + 1e-12
    t = np.arange(n) / sample_rate
    am = 1.0 + 0.8 * np.sin(2 * np.pi * tex.am_rate * t + rng.uniform(0, 2 * np.pi))
    tone_f = tex.tone * np.exp(rng.normal(0.0, 0.01))
    tone = 0.4 * np.sin(2 * np.pi * tone_f * t + rng.uniform(0, 2 * np.pi))
    x = am * noise + tone
    gain = rng.uniform(0.3, 0.8)
    return gain * x / np.abs(x).max()


def generate_synthetic_dataset(out_dir, seed=0, per_class=100, sample_rate=44100) -> DatasetManifest:
    """Write 10 x ``per_class`` one-second WAVs plus ``manifest.tsv`` under ``out_dir``.

    Each class keeps ``round(0.2 * per_class)`` clips for EVAL. Everything is
    a pure function of ``seed``.
    """
    if per_class < 2:
        raise ValidationError("per_class must be at least 2")
    out_dir = Path(out_dir)
    try:
        (out_dir / "audio").mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create dataset directory {out_dir}: {exc}") from exc
    n_eval = round(0.2 * per_class)
    entries = []
    for label, name in enumerate(CLASS_NAMES):
        rng = np.random.default_rng([seed, label])
        eval_idx = set(rng.permutation(per_class)[:n_eval].tolist())
        for i in range(per_class):
            samples = synth_clip(label, rng, sample_rate)
            rel = f"audio/{name}_{i:03d}.wav"
            write_wav(out_dir / rel, AudioClip(samples, sample_rate))
            city = CITIES[int(rng.integers(len(CITIES)))]
            split = Split.EVAL if i in eval_idx else Split.TRAIN
            entries.append(ManifestEntry(rel, name, Device.SYNTH, city, split))
    manifest = DatasetManifest(entries, CLASS_NAMES, root=out_dir)
    save_manifest(manifest, out_dir / "manifest.tsv")
    return manifest
