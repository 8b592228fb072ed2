"""Weighted loss, AdamW and the fit/evaluate loop."""

from __future__ import annotations

import csv
import gc
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import AblationFlags, ModelConfig
from .data import N_CLASSES, PHONEMES, DatasetManifest, read_megb, session_normalize
from .metrics import MetricsReport
from .model import Model, build_model, forward_logits, predict_proba, save_checkpoint
from .sampling import AveragedSample, ValidationSet, WindowPool, build_validation_set, training_batch

log = logging.getLogger("mebm.training")

DEFAULT_WEIGHTS = {
    "ey": 0.05, "ay": 3.00, "uh": 10.00, "uw": 3.00, "s": 0.80,
    "sh": 3.00, "m": 3.00, "ae": 3.00, "jh": 1.50, "ah": 2.00,
}


@dataclass(frozen=True)
class LossWeights:
    vector: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=np.float64)
        if v.shape != (N_CLASSES,) or not np.all(v > 0) or not np.all(np.isfinite(v)):
            raise ValueError(f"loss weights must be {N_CLASSES} positive finite values")
        object.__setattr__(self, "vector", v)

    @classmethod
    def from_mapping(cls, mapping: Mapping[str, float], labels=PHONEMES) -> "LossWeights":
        unknown = set(mapping) - set(labels)
        if unknown:
            raise ValueError(f"unknown phoneme labels: {sorted(unknown)}")
        return cls(np.array([float(mapping.get(p, 1.0)) for p in labels]))

    @classmethod
    def default(cls) -> "LossWeights":
        return cls.from_mapping(DEFAULT_WEIGHTS)

    @classmethod
    def uniform(cls) -> "LossWeights":
        return cls(np.ones(N_CLASSES))

    def __getitem__(self, label: str) -> float:
        return float(self.vector[PHONEMES.index(label)])


def weighted_cross_entropy(scores: Tensor, targets, weights: LossWeights | np.ndarray,
                           from_probs: bool = False) -> Tensor:
    """Weighted mean of -log p[target].

    ``scores`` are logits by default (log-softmax path).  With
    ``from_probs=True`` they are probabilities and only the target entries
    are logged, so exact one-hot rows give a loss of 0.
    """
    targets = np.asarray(targets, dtype=np.int64)
    b, c = scores.shape
    if targets.shape != (b,):
        raise ValueError(f"expected {b} targets, got shape {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"targets must lie in [0, {c})")
    w = weights.vector if isinstance(weights, LossWeights) else np.asarray(weights, dtype=np.float64)
    wy = w[targets]
    coef = np.zeros((b, c), dtype=scores.dtype)
    coef[np.arange(b), targets] = wy / wy.sum()
    if from_probs:
        p_target = ad.sum(scores * Tensor((coef > 0).astype(scores.dtype)), axis=1)
        return -ad.sum(ad.log(p_target) * Tensor((wy / wy.sum()).astype(scores.dtype)))
    return -ad.sum(ad.log_softmax(scores, axis=1) * Tensor(coef))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 80
    lr: float = 1e-3
    batch_size: int = 256
    samples_per_epoch: int = 40000
    seed: int = 0
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    jitter: bool = True
    per_session: bool = False
    eval_batch_size: int = 256

    def __post_init__(self):
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        for name in ("epochs", "batch_size", "samples_per_epoch", "eval_batch_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not self.lr > 0 or not self.eps > 0 or self.weight_decay < 0:
            raise ValueError("lr and eps must be positive, weight_decay non-negative")
        if len(self.betas) != 2 or not all(0 <= b < 1 for b in self.betas):
            raise ValueError("betas must be two values in [0, 1)")
        if self.samples_per_epoch < self.batch_size:
            raise ValueError("samples_per_epoch must cover at least one full batch")

    @property
    def batches_per_epoch(self) -> int:
        # full batches only; 40000 / 256 gives 156 batches (39,936 samples)
        return self.samples_per_epoch // self.batch_size

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["betas"] = list(self.betas)
        return d


class OptimizerError(FloatingPointError):
    pass


@dataclass
class AdamW:
    params: dict[str, Tensor]
    lr: float = 1e-3
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step_count: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        for name, p in self.params.items():
            self.m[name] = np.zeros_like(p.data)
            self.v[name] = np.zeros_like(p.data)

    def step(self) -> None:
        grads = {}
        for name, p in self.params.items():
            g = np.zeros_like(p.data) if p.grad is None else p.grad
            if g.shape != p.data.shape:
                raise ValueError(f"gradient of '{name}' has shape {g.shape}, parameter {p.data.shape}")
            if not np.all(np.isfinite(g)):
                raise OptimizerError(f"non-finite gradient in parameter '{name}' at step {self.step_count + 1}")
            grads[name] = g
        self.step_count += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1 ** self.step_count
        c2 = 1.0 - b2 ** self.step_count
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            if self.weight_decay:
                p.data *= 1.0 - self.lr * self.weight_decay
            p.data -= (self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)).astype(p.data.dtype)


def adamw_step(opt: AdamW) -> None:
    opt.step()


# -- evaluation -----------------------------------------------------------------------------

def evaluate(model: Model, samples: list[AveragedSample] | ValidationSet, batch_size: int = 256) -> MetricsReport:
    if isinstance(samples, ValidationSet):
        samples = samples.samples
    if not samples:
        raise ValueError("cannot evaluate on an empty sample list")
    x = np.stack([s.features for s in samples])
    y = np.array([s.phoneme_id for s in samples], dtype=np.int64)
    return MetricsReport.from_predictions(y, predict_proba(model, x, batch_size))


# -- fit ------------------------------------------------------------------------------------

@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_f1_macro: float
    val_top3: float
    val_top5: float


@dataclass
class FitResult:
    model: Model
    history: list[EpochRecord]
    best_epoch: int
    report: MetricsReport
    validation: ValidationSet


def history_csv(history: list[EpochRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["epoch", "train_loss", "val_f1_macro", "val_top3", "val_top5"])
    for r in history:
        writer.writerow([r.epoch, repr(r.train_loss), repr(r.val_f1_macro), repr(r.val_top3), repr(r.val_top5)])
    return buf.getvalue()


def load_normalized_sessions(paths):
    """Read and z-score MEGB files lazily, one session in memory at a time."""
    for path in paths:
        rec = read_megb(path)
        yield session_normalize(rec, inplace=True)


def fit(manifest: DatasetManifest | str | Path, model_cfg: ModelConfig | None = None,
        train_cfg: TrainConfig | None = None, flags: AblationFlags | None = None,
        out_dir: str | Path | None = None, weights: LossWeights | None = None,
        on_epoch: Callable[[EpochRecord], None] | None = None) -> FitResult:
    """Train from scratch and return the best-validation-F1 model."""
    model_cfg = model_cfg or ModelConfig()
    train_cfg = train_cfg or TrainConfig()
    flags = flags or AblationFlags()
    if not isinstance(manifest, DatasetManifest):
        manifest = DatasetManifest.load(manifest)
    seed = train_cfg.seed

    # Validation first so its recordings can be dropped before the training set is loaded.
    val_pool = WindowPool(load_normalized_sessions(manifest.paths("validation")), release=True)
    validation = build_validation_set(val_pool, seed)
    del val_pool
    gc.collect()
    pool = WindowPool(load_normalized_sessions(manifest.paths("train")), release=True)
    return fit_pools(pool, validation, model_cfg, train_cfg, flags, out_dir, weights, on_epoch)


def fit_pools(pool: WindowPool, validation: ValidationSet, model_cfg: ModelConfig, train_cfg: TrainConfig,
              flags: AblationFlags, out_dir: str | Path | None = None, weights: LossWeights | None = None,
              on_epoch: Callable[[EpochRecord], None] | None = None) -> FitResult:
    """The training loop proper, over already-loaded data."""
    missing = [c for c in range(N_CLASSES) if pool.count(c) == 0]
    if missing:
        raise ValueError(f"classes without training events: {missing}")
    seed = train_cfg.seed
    if flags.use_weighted_loss:
        weights = weights or LossWeights.default()
    else:
        weights = LossWeights.uniform()

    model = build_model(model_cfg, flags, seed)
    opt = AdamW(model.params, lr=train_cfg.lr, betas=train_cfg.betas, eps=train_cfg.eps,
                weight_decay=train_cfg.weight_decay)
    history: list[EpochRecord] = []
    best_state, best_f1, best_epoch = None, -1.0, 0
    n_batches = train_cfg.batches_per_epoch
    step = 0
    for epoch in range(train_cfg.epochs):
        t0 = time.perf_counter()
        loss_sum = 0.0
        for b in range(n_batches):
            x, y = training_batch(pool, seed, epoch, b, train_cfg.batch_size,
                                  jitter=train_cfg.jitter, per_session=train_cfg.per_session)
            logits = forward_logits(model, x, training=True, step=step)
            loss = weighted_cross_entropy(logits, y, weights)
            model.store.zero_grad()
            loss.backward()
            opt.step()
            loss_sum += float(loss.item())
            step += 1
        report = evaluate(model, validation, train_cfg.eval_batch_size)
        rec = EpochRecord(epoch + 1, loss_sum / n_batches, report.f1_macro, report.top3, report.top5)
        history.append(rec)
        log.info("epoch %d loss %.4f f1 %.4f top3 %.4f (%.1fs)", rec.epoch, rec.train_loss,
                 rec.val_f1_macro, rec.val_top3, time.perf_counter() - t0)
        if on_epoch is not None:
            on_epoch(rec)
        if report.f1_macro > best_f1:
            best_f1, best_epoch, best_state = report.f1_macro, epoch + 1, model.state_arrays()

    model.load_state_arrays(best_state)
    report = evaluate(model, validation, train_cfg.eval_batch_size)
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_checkpoint(model, out / "checkpoint.mebm")
        (out / "history.csv").write_text(history_csv(history))
        (out / "report.json").write_text(report.to_json())
    return FitResult(model, history, best_epoch, report, validation)
