"""Averaging rules and construction of validation and training samples."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import MAX_JITTER, N_CLASSES, NORM_EPS, WINDOW, SessionRecording
from .rng import RngStream

N_CAP = 100
VAL_ITERATIONS = 8
MIN_VAL_EVENTS = 8


def _round_half_even(x: float) -> int:
    # Python's round() on floats already rounds ties to even.
    return int(round(x))


def _check_n(n: float) -> float:
    n = float(n)
    if not n >= 0:
        raise ValueError(f"mean events per session must be >= 0, got {n}")
    return n


def n_prime_val(n: float) -> int:
    """Deterministic number of windows averaged per validation sample."""
    n = _check_n(n)
    if n >= N_CAP:
        k = N_CAP
    elif n >= 50:
        k = _round_half_even(n)
    else:
        k = _round_half_even(1.5 * n)
    return max(1, k)


def n_prime_train(n: float, rng: RngStream) -> int:
    """Randomized number of windows averaged per training sample."""
    n = _check_n(n)
    if n >= N_CAP:
        k = N_CAP
    elif n >= 50:
        r = _round_half_even(n)
        k = rng.integers(r - 5, min(r + 5, N_CAP))
    else:
        k = _round_half_even(2.0 * n)
    return max(1, k)


@dataclass(frozen=True)
class ClassStats:
    totals: np.ndarray
    n_sessions: int

    @classmethod
    def from_sessions(cls, sessions: Sequence[SessionRecording], n_classes: int = N_CLASSES) -> "ClassStats":
        if not sessions:
            raise ValueError("no sessions given")
        totals = np.zeros(n_classes, dtype=np.int64)
        for rec in sessions:
            totals += np.bincount(rec.labels, minlength=n_classes)[:n_classes]
        return cls(totals, len(sessions))

    @property
    def n(self) -> np.ndarray:
        """Mean number of events per session for each class."""
        return self.totals / self.n_sessions

    def n_of(self, phoneme: int) -> float:
        return float(self.totals[phoneme]) / self.n_sessions


@dataclass
class AveragedSample:
    features: np.ndarray
    phoneme_id: int
    n_averaged: int
    session_ids: tuple[str, ...]
    event_indices: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)


class WindowPool:
    """Sessions stored time-major, plus the pooled event list of every class.

    Summing windows of a (samples, channels) array touches contiguous
    memory, which keeps averaging 100 windows around a millisecond.
    """

    def __init__(self, sessions: Iterable[SessionRecording], release: bool = False,
                 max_jitter: int = MAX_JITTER, n_classes: int = N_CLASSES):
        # ``sessions`` may be a generator; each recording is consumed once.
        self.max_jitter = max_jitter
        self.signals: list[np.ndarray] = []
        ids, sess, ons, labs = [], [], [], []
        totals = np.zeros(n_classes, dtype=np.int64)
        for i, rec in enumerate(sessions):
            rec.validate(max_jitter)
            if rec.onsets.size and rec.onsets[0] < max_jitter:
                raise ValueError(f"{rec.session_id}: first onset {rec.onsets[0]} leaves no room for jitter")
            self.signals.append(np.ascontiguousarray(rec.signal.T, dtype=np.float32))
            if release:
                rec.signal = np.empty((rec.n_channels, 0), dtype=np.float32)
            ids.append(rec.session_id)
            totals += np.bincount(rec.labels, minlength=n_classes)[:n_classes]
            sess.append(np.full(len(rec.onsets), i, dtype=np.int64))
            ons.append(rec.onsets)
            labs.append(rec.labels)
        if not ids:
            raise ValueError("no sessions given")
        self.session_ids = tuple(ids)
        self.stats = ClassStats(totals, len(ids))
        session_of = np.concatenate(sess)
        onsets = np.concatenate(ons)
        labels = np.concatenate(labs)
        self.n_channels = self.signals[0].shape[1]
        self.class_sessions = [session_of[labels == c] for c in range(n_classes)]
        self.class_onsets = [onsets[labels == c] for c in range(n_classes)]

    def count(self, phoneme: int) -> int:
        return len(self.class_onsets[phoneme])

    def average(self, phoneme: int, indices: np.ndarray, offsets: np.ndarray) -> np.ndarray:
        """Per-channel z-scored mean of the chosen windows, shape (channels, WINDOW)."""
        acc = np.zeros((WINDOW, self.n_channels), dtype=np.float32)
        sessions = self.class_sessions[phoneme][indices]
        starts = self.class_onsets[phoneme][indices] + offsets
        for s, t0 in zip(sessions.tolist(), starts.tolist()):
            np.add(acc, self.signals[s][t0:t0 + WINDOW], out=acc)
        return renormalize(acc.T.astype(np.float64) / len(indices))

    def sources(self, phoneme: int, indices: np.ndarray) -> tuple[str, ...]:
        used = np.unique(self.class_sessions[phoneme][indices])
        return tuple(self.session_ids[i] for i in used.tolist())


def renormalize(window: np.ndarray, eps: float = NORM_EPS) -> np.ndarray:
    """Z-score each channel of a (channels, time) window; returns float32."""
    w = np.asarray(window, dtype=np.float64)
    w = w - w.mean(axis=1, keepdims=True)
    sd = np.sqrt((w * w).mean(axis=1, keepdims=True))
    return (w / (sd + eps)).astype(np.float32)


# -- validation -------------------------------------------------------------------------

@dataclass
class ValidationSet:
    samples: list[AveragedSample]
    discarded: list[tuple[int, int, str]]

    def arrays(self) -> tuple[np.ndarray, np.ndarray]:
        x = np.stack([s.features for s in self.samples])
        y = np.array([s.phoneme_id for s in self.samples], dtype=np.int64)
        return x, y

    def discard_report(self, vocab=None) -> str:
        lines = [f"{'class':<8}{'events':>8}  reason"]
        for c, count, reason in self.discarded:
            name = vocab[c] if vocab is not None else str(c)
            lines.append(f"{name:<8}{count:>8}  {reason}")
        if not self.discarded:
            lines.append("(none)")
        return "\n".join(lines)


def build_validation_set(sessions: Sequence[SessionRecording] | WindowPool, seed: int,
                         iterations: int = VAL_ITERATIONS, min_events: int = MIN_VAL_EVENTS) -> ValidationSet:
    """Eight jitter-free averaged samples per class with enough events."""
    if not isinstance(sessions, WindowPool) and not sessions:
        raise ValueError("validation needs at least one session")
    pool = sessions if isinstance(sessions, WindowPool) else WindowPool(sessions)
    samples, discarded = [], []
    for c in range(len(pool.class_onsets)):
        available = pool.count(c)
        if available < min_events:
            discarded.append((c, available, f"fewer than {min_events} events"))
            continue
        k = n_prime_val(pool.stats.n_of(c))
        for it in range(iterations):
            rng = RngStream.from_names(seed, "validation", c, it)
            idx = rng.below_array(available, k)
            offsets = np.zeros(k, dtype=np.int64)
            samples.append(AveragedSample(pool.average(c, idx, offsets), c, k, pool.sources(c, idx), idx, offsets))
    return ValidationSet(samples, discarded)


# -- training -----------------------------------------------------------------------------

def make_training_sample(pool: WindowPool, rng: RngStream, jitter: bool = True,
                         per_session: bool = False, stats: ClassStats | None = None) -> AveragedSample:
    """One uniformly chosen class, averaged over a randomized number of jittered windows."""
    stats = stats or pool.stats
    n_classes = len(pool.class_onsets)
    c = rng.below(n_classes)
    available = pool.count(c)
    if available == 0:
        raise ValueError(f"class {c} has no events in the training sessions")
    k = n_prime_train(stats.n_of(c), rng)
    if per_session:
        present = np.unique(pool.class_sessions[c])
        chosen = int(present[rng.below(len(present))])
        candidates = np.flatnonzero(pool.class_sessions[c] == chosen)
        idx = candidates[rng.below_array(len(candidates), k)]
    else:
        idx = rng.below_array(available, k)
    if jitter:
        offsets = rng.integers_array(-pool.max_jitter, pool.max_jitter, k)
    else:
        offsets = np.zeros(k, dtype=np.int64)
    return AveragedSample(pool.average(c, idx, offsets), c, k, pool.sources(c, idx), idx, offsets)


def sample_stream(seed: int, epoch: int, index: int) -> RngStream:
    return RngStream.from_names(seed, "train", epoch, index)


def training_batch(pool: WindowPool, seed: int, epoch: int, batch: int, batch_size: int,
                   jitter: bool = True, per_session: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Batch ``batch`` of ``epoch``; sample i uses its own stream, so order of construction is irrelevant."""
    x = np.empty((batch_size, pool.n_channels, WINDOW), dtype=np.float32)
    y = np.empty(batch_size, dtype=np.int64)
    for j in range(batch_size):
        s = make_training_sample(pool, sample_stream(seed, epoch, batch * batch_size + j), jitter, per_session)
        x[j] = s.features
        y[j] = s.phoneme_id
    return x, y
