"""Recordings, the MEGB file format, normalization, windowing and synthetic data."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator

import numpy as np
from scipy.signal import lfilter

from .rng import RngStream, counter_normal, derive_key

N_CHANNELS = 306
N_CLASSES = 39
WINDOW = 125
SAMPLE_RATE = 250.0
MAX_JITTER = 3
NORM_EPS = 1e-8

# 39-phoneme ARPAbet inventory, lowercase, without stress marks.
PHONEMES = (
    "aa", "ae", "ah", "ao", "aw", "ay", "b", "ch", "d", "dh", "eh", "er", "ey",
    "f", "g", "hh", "ih", "iy", "jh", "k", "l", "m", "n", "ng", "ow", "oy", "p",
    "r", "s", "sh", "t", "th", "uh", "uw", "v", "w", "y", "z", "zh",
)

MEGB_MAGIC = b"MEGB"
MEGB_VERSION = 1
_HEADER = struct.Struct("<4sIIQdQ")
_EVENT = np.dtype([("onset", "<u8"), ("phoneme", "<u2")])
MANIFEST_VERSION = 1


class FormatError(ValueError):
    pass


class WindowError(IndexError):
    pass


# -- vocabulary -----------------------------------------------------------------------

class PhonemeVocab:
    def __init__(self, labels=PHONEMES):
        labels = tuple(labels)
        if len(labels) != N_CLASSES or len(set(labels)) != N_CLASSES:
            raise ValueError(f"vocabulary needs {N_CLASSES} unique labels, got {len(labels)}")
        self.labels = labels
        self.index = {label: i for i, label in enumerate(labels)}

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i: int) -> str:
        return self.labels[i]

    def id(self, label: str) -> int:
        return self.index[label]

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.labels) + "\n")

    @classmethod
    def load(cls, path) -> "PhonemeVocab":
        lines = [ln.strip() for ln in Path(path).read_text().splitlines()]
        return cls([ln for ln in lines if ln])


# -- recordings -------------------------------------------------------------------------

@dataclass
class SessionRecording:
    """One continuous recording: ``signal`` is (channels, samples)."""

    session_id: str
    signal: np.ndarray
    onsets: np.ndarray
    labels: np.ndarray
    sample_rate_hz: float = SAMPLE_RATE

    def __post_init__(self):
        self.onsets = np.asarray(self.onsets, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.int64)

    @property
    def n_channels(self) -> int:
        return self.signal.shape[0]

    @property
    def n_samples(self) -> int:
        return self.signal.shape[1]

    @property
    def events(self) -> list[tuple[int, int]]:
        return list(zip(self.onsets.tolist(), self.labels.tolist()))

    def validate(self, max_jitter: int = MAX_JITTER) -> None:
        if self.sample_rate_hz != SAMPLE_RATE:
            raise ValueError(f"only {SAMPLE_RATE:g} Hz recordings are supported, got {self.sample_rate_hz:g}")
        if self.signal.ndim != 2:
            raise ValueError(f"signal must be 2-D, got shape {self.signal.shape}")
        if len(self.onsets) != len(self.labels):
            raise ValueError("onset and label arrays differ in length")
        if len(self.onsets):
            if np.any(np.diff(self.onsets) <= 0):
                raise ValueError("event onsets must be strictly increasing")
            if self.onsets[0] < 0:
                raise ValueError("negative event onset")
            limit = self.n_samples - WINDOW - max_jitter
            bad = np.flatnonzero(self.onsets > limit)
            if bad.size:
                raise ValueError(f"event at onset {self.onsets[bad[0]]} leaves no room for a "
                                 f"jittered window (max onset {limit})")
            if self.labels.min() < 0 or self.labels.max() >= N_CLASSES:
                raise ValueError(f"phoneme ids must lie in [0, {N_CLASSES})")

    def class_onsets(self, phoneme: int) -> np.ndarray:
        return self.onsets[self.labels == phoneme]


# -- MEGB binary format -------------------------------------------------------------------

def megb_header_size(n_events: int) -> int:
    return _HEADER.size + _EVENT.itemsize * n_events


def write_megb(rec: SessionRecording, path) -> None:
    rec.validate()
    header = _HEADER.pack(MEGB_MAGIC, MEGB_VERSION, rec.n_channels, rec.n_samples,
                          float(rec.sample_rate_hz), len(rec.onsets))
    events = np.empty(len(rec.onsets), dtype=_EVENT)
    events["onset"] = rec.onsets
    events["phoneme"] = rec.labels
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(events.tobytes())
        # Row-major payload written in row blocks to bound the temporary copy.
        for start in range(0, rec.n_channels, 32):
            fh.write(np.ascontiguousarray(rec.signal[start:start + 32], dtype="<f4").tobytes())


def read_megb(path, session_id: str | None = None) -> SessionRecording:
    path = Path(path)
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise FormatError(f"{path}: truncated header")
        magic, version, channels, samples, rate, n_events = _HEADER.unpack(head)
        if magic != MEGB_MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}")
        if version != MEGB_VERSION:
            raise FormatError(f"{path}: unsupported MEGB version {version}")
        raw_events = fh.read(_EVENT.itemsize * n_events)
        if len(raw_events) < _EVENT.itemsize * n_events:
            raise FormatError(f"{path}: truncated event table")
        events = np.frombuffer(raw_events, dtype=_EVENT)
        signal = np.fromfile(fh, dtype="<f4", count=channels * samples)
        if signal.size < channels * samples:
            raise FormatError(f"{path}: truncated signal payload")
        if fh.read(1):
            raise FormatError(f"{path}: trailing bytes after payload")
    rec = SessionRecording(
        session_id=session_id or path.stem,
        signal=signal.reshape(channels, samples).astype(np.float32, copy=False),
        onsets=events["onset"].astype(np.int64),
        labels=events["phoneme"].astype(np.int64),
        sample_rate_hz=rate,
    )
    try:
        rec.validate()
    except ValueError as exc:
        raise FormatError(f"{path}: {exc}") from None
    return rec


# -- normalization and windows ----------------------------------------------------------------

def zscore_rows(x: np.ndarray, out: np.ndarray | None = None, eps: float = NORM_EPS) -> np.ndarray:
    """Z-score each row over its last axis with float64 statistics."""
    out = np.empty_like(x) if out is None else out
    step = max(1, (1 << 22) // max(1, x.shape[-1]))
    for start in range(0, x.shape[0], step):
        block = x[start:start + step].astype(np.float64)
        mu = block.mean(axis=-1, keepdims=True)
        block -= mu
        sd = np.sqrt((block * block).mean(axis=-1, keepdims=True))
        out[start:start + step] = block / (sd + eps)
    return out


def session_normalize(rec: SessionRecording, inplace: bool = False) -> SessionRecording:
    """Per-channel z-score over the whole session (population std, eps 1e-8)."""
    if rec.n_samples < 2:
        raise ValueError("normalization needs at least two samples")
    signal = zscore_rows(rec.signal, out=rec.signal if inplace else None)
    if inplace:
        return rec
    return SessionRecording(rec.session_id, signal, rec.onsets.copy(), rec.labels.copy(), rec.sample_rate_hz)


def window_start(onset: int, jitter: bool, rng: RngStream | None, max_jitter: int = MAX_JITTER) -> int:
    if not jitter:
        return onset
    if rng is None:
        raise ValueError("jittered extraction needs an RngStream")
    return onset + rng.integers(-max_jitter, max_jitter)


def check_window(n_samples: int, onset: int, jitter: bool, max_jitter: int = MAX_JITTER,
                 length: int = WINDOW) -> None:
    lo = onset - (max_jitter if jitter else 0)
    hi = onset + (max_jitter if jitter else 0) + length
    if lo < 0 or hi > n_samples:
        raise WindowError(f"window around onset {onset} spans [{lo}, {hi}) outside [0, {n_samples})")


def extract_window(rec: SessionRecording, onset: int, jitter: bool = False, rng: RngStream | None = None,
                   max_jitter: int = MAX_JITTER, length: int = WINDOW) -> np.ndarray:
    """A (channels, length) view starting at ``onset`` (+ uniform jitter)."""
    check_window(rec.n_samples, onset, jitter, max_jitter, length)
    start = window_start(onset, jitter, rng, max_jitter)
    return rec.signal[:, start:start + length]


def mean_of_windows(signal: np.ndarray, starts: np.ndarray, length: int = WINDOW) -> np.ndarray:
    """Float64 mean of the windows ``signal[:, s:s+length]`` for ``s`` in ``starts``."""
    starts = np.asarray(starts, dtype=np.int64)
    acc = np.zeros((signal.shape[0], length), dtype=np.float64)
    for chunk in range(0, len(starts), 32):
        idx = starts[chunk:chunk + 32, None] + np.arange(length)
        acc += signal[:, idx].sum(axis=1, dtype=np.float64)
    return acc / len(starts)


# -- manifest ---------------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    sessions: list[tuple[str, str]]
    vocab: str = "vocab.txt"
    format_version: int = MANIFEST_VERSION
    root: Path = field(default_factory=Path)

    def paths(self, role: str) -> list[Path]:
        return [self.root / p for p, r in self.sessions if r == role]

    def validate(self) -> None:
        if self.format_version != MANIFEST_VERSION:
            raise ValueError(f"unsupported manifest version {self.format_version}")
        roles = {r for _, r in self.sessions}
        if not roles <= {"train", "validation"}:
            raise ValueError(f"unknown session roles: {sorted(roles - {'train', 'validation'})}")
        for role in ("train", "validation"):
            if role not in roles:
                raise ValueError(f"manifest has no '{role}' sessions")

    def save(self, path) -> None:
        doc = {
            "format_version": self.format_version,
            "vocab": self.vocab,
            "sessions": [{"path": p, "role": r} for p, r in self.sessions],
        }
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        doc = json.loads(path.read_text())
        unknown = set(doc) - {"format_version", "vocab", "sessions"}
        if unknown:
            raise ValueError(f"unknown manifest keys: {sorted(unknown)}")
        sessions = [(s["path"], s["role"]) for s in doc["sessions"]]
        man = cls(sessions, doc.get("vocab", "vocab.txt"), doc.get("format_version", MANIFEST_VERSION),
                  root=path.parent)
        man.validate()
        return man


# -- synthetic MEG ------------------------------------------------------------------------------

@dataclass(frozen=True)
class SynthSpec:
    """Synthetic evoked-response recordings.

    Class patterns and background "brain" noise both live in the span of a
    shared random leadfield with ``n_sources`` columns; the background is
    AR(1)-coloured (coefficient ``noise_ar``) and a fraction
    ``sensor_noise_fraction`` of the noise power is white sensor noise.
    ``class_specificity`` sets how much of each spatial pattern is
    class-specific rather than shared.  Templates are Gabor bursts whose
    frequencies are evenly spaced over 4-40 Hz.
    """

    n_sessions: int = 3
    events_per_class_per_session: int = 20
    snr: float = 4.0
    seed: int = 0
    sample_rate: float = SAMPLE_RATE
    n_channels: int = N_CHANNELS
    n_classes: int = N_CLASSES
    n_sources: int = 16
    class_specificity: float = 0.5
    noise_ar: float = 0.9
    sensor_noise_fraction: float = 0.1
    min_spacing: int = 150
    spacing_jitter: int = 20
    freq_range: tuple[float, float] = (4.0, 40.0)
    burst_center_s: float = 0.15
    burst_fwhm_s: float = 0.2
    session_prefix: str = "synth"

    def validate(self) -> None:
        if self.n_sessions <= 0 or self.events_per_class_per_session <= 0:
            raise ValueError("session and event counts must be positive")
        if not self.snr >= 0:
            raise ValueError(f"snr must be >= 0, got {self.snr}")
        if self.sample_rate != SAMPLE_RATE:
            raise ValueError(f"only {SAMPLE_RATE:g} Hz is supported")
        if self.min_spacing < WINDOW + MAX_JITTER:
            raise ValueError(f"events need at least {WINDOW + MAX_JITTER} samples of spacing")
        if not 0.0 < self.class_specificity <= 1.0:
            raise ValueError("class_specificity must lie in (0, 1]")
        if not 0.0 <= self.noise_ar < 1.0 or not 0.0 <= self.sensor_noise_fraction <= 1.0:
            raise ValueError("noise_ar must lie in [0, 1) and sensor_noise_fraction in [0, 1]")

    def amplitudes(self) -> tuple[float, float]:
        """(signal amplitude, noise std); snr=inf means no noise, snr=0 no signal."""
        if math.isinf(self.snr):
            return 1.0, 0.0
        if self.snr == 0:
            return 0.0, 1.0
        return 1.0, 1.0 / self.snr


def _leadfield(spec: SynthSpec) -> np.ndarray:
    lf = counter_normal(derive_key(spec.seed, "synth", "leadfield"), spec.n_channels * spec.n_sources)
    lf = lf.reshape(spec.n_channels, spec.n_sources)
    # unit mean-square gain per channel for unit-variance sources
    return lf / math.sqrt((lf * lf).sum(axis=1).mean())


def class_templates(spec: SynthSpec) -> tuple[np.ndarray, np.ndarray]:
    """Spatial patterns (classes, channels) and temporal templates (classes, WINDOW).

    Both are scaled to unit RMS, so ``outer(s_c, g_c)`` has unit RMS.
    """
    lf = _leadfield(spec)
    shared = counter_normal(derive_key(spec.seed, "synth", "pattern", "shared"), spec.n_sources)
    shared /= np.linalg.norm(shared)
    patterns = np.empty((spec.n_classes, spec.n_channels))
    beta = spec.class_specificity
    for c in range(spec.n_classes):
        own = counter_normal(derive_key(spec.seed, "synth", "pattern", c), spec.n_sources)
        own /= np.linalg.norm(own)
        s = lf @ (math.sqrt(1.0 - beta) * shared + math.sqrt(beta) * own)
        patterns[c] = s / np.sqrt(np.mean(s * s))

    order = list(range(spec.n_classes))
    RngStream.from_names(spec.seed, "synth", "frequencies").shuffle(order)
    lo, hi = spec.freq_range
    freqs = np.empty(spec.n_classes)
    freqs[order] = np.linspace(lo, hi, spec.n_classes)
    t = np.arange(WINDOW) / spec.sample_rate
    sigma = spec.burst_fwhm_s / (2.0 * math.sqrt(2.0 * math.log(2.0)))
    envelope = np.exp(-0.5 * ((t - spec.burst_center_s) / sigma) ** 2)
    templates = envelope[None, :] * np.cos(2.0 * math.pi * freqs[:, None] * (t[None, :] - spec.burst_center_s))
    templates /= np.sqrt(np.mean(templates ** 2, axis=1, keepdims=True))
    return patterns, templates


def class_frequencies(spec: SynthSpec) -> np.ndarray:
    order = list(range(spec.n_classes))
    RngStream.from_names(spec.seed, "synth", "frequencies").shuffle(order)
    freqs = np.empty(spec.n_classes)
    freqs[order] = np.linspace(*spec.freq_range, spec.n_classes)
    return freqs


def _place_events(spec: SynthSpec, session: int) -> tuple[np.ndarray, np.ndarray, int]:
    rng = RngStream.from_names(spec.seed, "synth", "events", session)
    labels = [c for c in range(spec.n_classes) for _ in range(spec.events_per_class_per_session)]
    rng.shuffle(labels)
    onsets = np.empty(len(labels), dtype=np.int64)
    pos = 2 * MAX_JITTER + 20
    for i in range(len(labels)):
        onsets[i] = pos
        pos += spec.min_spacing + rng.integers(0, spec.spacing_jitter)
    n_samples = int(onsets[-1]) + WINDOW + MAX_JITTER + 20
    return onsets, np.asarray(labels, dtype=np.int64), n_samples


def _add_noise(signal: np.ndarray, spec: SynthSpec, session: int, noise_std: float) -> None:
    if noise_std == 0.0:
        return
    n_ch, n = signal.shape
    brain_var = (1.0 - spec.sensor_noise_fraction) * noise_std ** 2
    sensor_std = math.sqrt(spec.sensor_noise_fraction) * noise_std
    if brain_var > 0:
        lf = _leadfield(spec)
        sources = counter_normal(derive_key(spec.seed, "synth", "brain", session), spec.n_sources * n)
        sources = sources.reshape(spec.n_sources, n)
        a = spec.noise_ar
        # stationary AR(1) with unit variance
        sources[:, 0] /= math.sqrt(1.0 - a * a)
        sources = lfilter([math.sqrt(1.0 - a * a)], [1.0, -a], sources, axis=1)
        lf = lf * math.sqrt(brain_var)
        for start in range(0, n_ch, 16):
            signal[start:start + 16] += (lf[start:start + 16] @ sources).astype(np.float32)
        del sources
    if sensor_std > 0:
        key = derive_key(spec.seed, "synth", "sensor", session)
        for start in range(0, n_ch, 8):
            rows = min(8, n_ch - start)
            block = counter_normal(key, rows * n, offset=start * n).reshape(rows, n)
            signal[start:start + rows] += (sensor_std * block).astype(np.float32)


def synth_session(spec: SynthSpec, session: int, session_id: str | None = None) -> SessionRecording:
    spec.validate()
    onsets, labels, n_samples = _place_events(spec, session)
    amplitude, noise_std = spec.amplitudes()
    patterns, templates = class_templates(spec)
    signal = np.zeros((spec.n_channels, n_samples), dtype=np.float32)
    _add_noise(signal, spec, session, noise_std)
    if amplitude > 0:
        for onset, c in zip(onsets.tolist(), labels.tolist()):
            signal[:, onset:onset + WINDOW] += (amplitude * np.outer(patterns[c], templates[c])).astype(np.float32)
    rec = SessionRecording(session_id or f"{spec.session_prefix}{session:02d}", signal, onsets, labels, spec.sample_rate)
    rec.validate()
    return rec


def iter_synth_sessions(spec: SynthSpec) -> Iterator[SessionRecording]:
    for s in range(spec.n_sessions):
        yield synth_session(spec, s)


def synth_generate(spec: SynthSpec) -> list[SessionRecording]:
    """All sessions of ``spec``; fully determined by ``spec.seed``."""
    return list(iter_synth_sessions(spec))


def measured_snr(noisy: SessionRecording, clean: SessionRecording) -> float:
    """Window-level amplitude SNR: RMS of the clean event windows over RMS of the noise there."""
    idx = clean.onsets[:, None] + np.arange(WINDOW)
    sig = clean.signal[:, idx].astype(np.float64)
    noise = noisy.signal[:, idx].astype(np.float64) - sig
    return float(np.sqrt(np.mean(sig ** 2)) / np.sqrt(np.mean(noise ** 2)))
