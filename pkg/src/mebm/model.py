"""End-to-end decoder assembly, ablation variants and checkpoint files."""

from __future__ import annotations

import io
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import blocks
from .autodiff import Tensor
from .blocks import Mode, ParamStore
from .config import AblationFlags, ModelConfig, config_digest

CHECKPOINT_MAGIC = b"MEBM"
CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    pass


@dataclass
class Model:
    cfg: ModelConfig
    flags: AblationFlags
    seed: int
    store: ParamStore

    @property
    def params(self) -> dict[str, Tensor]:
        return self.store.params

    @property
    def buffers(self) -> dict[str, np.ndarray]:
        return self.store.buffers

    def n_trainable(self) -> int:
        return self.store.n_trainable()

    def fusion_channels(self) -> int:
        return self.cfg.d * (int(self.flags.use_multiscale) + int(self.flags.use_bm_encoder))

    def state_arrays(self) -> dict[str, np.ndarray]:
        """Copies of every parameter and buffer, keyed by name."""
        out = {name: p.data.copy() for name, p in self.params.items()}
        out.update({name: b.copy() for name, b in self.buffers.items()})
        return out

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        for name, p in self.params.items():
            p.data[...] = state[name]
        for name, b in self.buffers.items():
            b[...] = state[name]

    def logits(self, x, training: bool = False, step: int = 0, seed: int | None = None) -> Tensor:
        return forward_logits(self, x, training=training, step=step, seed=seed)

    def __call__(self, x, training: bool = False, step: int = 0, seed: int | None = None) -> Tensor:
        return forward(self, x, training=training, step=step, seed=seed)


def build_model(cfg: ModelConfig | None = None, flags: AblationFlags | None = None, seed: int = 0) -> Model:
    """Initialize a model deterministically from ``seed``."""
    cfg = cfg or ModelConfig()
    flags = flags or AblationFlags()
    store = ParamStore(dtype=np.dtype(cfg.dtype), seed=seed)
    model = Model(cfg, flags, seed, store)
    blocks.init_spatial_attention(store, cfg)
    if flags.use_multiscale:
        for b in range(cfg.n_multiscale_blocks):
            blocks.init_multiscale_block(store, cfg, b)
    if flags.use_bm_encoder:
        for b in range(cfg.n_bm_blocks):
            blocks.init_bm_encoder(store, cfg, b)
    blocks.init_fusion(store, cfg, model.fusion_channels())
    if flags.use_conv_attention:
        blocks.init_attention_pool(store, cfg)
    blocks.init_classifier_head(store, cfg)
    return model


def _check_input(model: Model, x) -> Tensor:
    cfg = model.cfg
    if not isinstance(x, Tensor):
        x = Tensor(np.asarray(x, dtype=cfg.dtype))
    elif x.dtype != np.dtype(cfg.dtype):
        x = Tensor(x.data.astype(cfg.dtype))
    if x.ndim != 3 or x.shape[1] != cfg.c_in:
        raise ValueError(f"expected input of shape (B, {cfg.c_in}, T), got {x.shape}")
    if not np.isfinite(x.data).all():
        raise ad.NonFiniteError("model input contains NaN or Inf")
    return x


def pooled_features(model: Model, x, training: bool = False, step: int = 0,
                    seed: int | None = None) -> Tensor:
    """Everything up to (and including) temporal pooling: (B, D)."""
    cfg, flags, store = model.cfg, model.flags, model.store
    x = _check_input(model, x)
    mode = Mode(training=training, seed=model.seed if seed is None else seed, step=step)
    hs = blocks.spatial_attention(x, store, cfg, mode)
    streams = []
    if flags.use_multiscale:
        h = hs
        for b in range(cfg.n_multiscale_blocks):
            h = blocks.multiscale_block(h, store, cfg, mode, b)
        streams.append(h)
    if flags.use_bm_encoder:
        h = hs
        for b in range(cfg.n_bm_blocks):
            h = blocks.bm_encoder(h, store, cfg, mode, b)
        streams.append(h)
    h_cat = streams[0] if len(streams) == 1 else ad.concat(streams, axis=1)
    fused = blocks.depthwise_separable_fuse(h_cat, store, cfg, mode)
    if flags.use_conv_attention:
        return blocks.conv_attention_pool(fused, store)
    return blocks.sum_pool(fused)


def forward_logits(model: Model, x, training: bool = False, step: int = 0,
                   seed: int | None = None) -> Tensor:
    z = pooled_features(model, x, training=training, step=step, seed=seed)
    return blocks.classifier_logits(z, model.store)


def forward(model: Model, x, training: bool = False, step: int = 0, seed: int | None = None) -> Tensor:
    """Class probabilities, shape (B, n_classes)."""
    return ad.softmax(forward_logits(model, x, training, step, seed), axis=1)


def predict_proba(model: Model, x: np.ndarray, batch_size: int = 256) -> np.ndarray:
    """Eval-mode probabilities for a stack of windows, without building a graph."""
    x = np.asarray(x)
    outs = []
    for start in range(0, len(x), batch_size):
        outs.append(forward(model, x[start:start + batch_size]).data)
    return np.concatenate(outs, axis=0)


# -- checkpoint files --------------------------------------------------------------------------------
#
# magic "MEBM" | u32 version | 32-byte config digest | u32 record count |
# records: u32 name length, utf-8 name, u32 rank, u32 extents..., f32 LE payload |
# u32 CRC-32 of everything before it.

def _records(model: Model):
    yield from model.params.items()
    yield from model.buffers.items()


def save_checkpoint(model: Model, path) -> None:
    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", CHECKPOINT_VERSION))
    buf.write(config_digest(model.cfg, model.flags))
    items = list(_records(model))
    buf.write(struct.pack("<I", len(items)))
    for name, value in items:
        arr = value.data if isinstance(value, Tensor) else value
        raw = name.encode("utf-8")
        buf.write(struct.pack("<I", len(raw)))
        buf.write(raw)
        buf.write(struct.pack("<I", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
        buf.write(np.ascontiguousarray(arr, dtype="<f4").tobytes())
    body = buf.getvalue()
    Path(path).write_bytes(body + struct.pack("<I", zlib.crc32(body)))


def _read_checkpoint(path) -> tuple[bytes, list[tuple[str, np.ndarray]]]:
    blob = Path(path).read_bytes()
    if len(blob) < 4 + 4 + 32 + 4 + 4 or blob[:4] != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: not a MEBM checkpoint")
    body, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(body) != crc:
        raise CheckpointError(f"{path}: checksum mismatch")
    (version,) = struct.unpack_from("<I", body, 4)
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    digest = body[8:40]
    (count,) = struct.unpack_from("<I", body, 40)
    pos = 44
    records = []
    try:
        for _ in range(count):
            (n,) = struct.unpack_from("<I", body, pos)
            pos += 4
            name = body[pos:pos + n].decode("utf-8")
            pos += n
            (rank,) = struct.unpack_from("<I", body, pos)
            pos += 4
            shape = struct.unpack_from(f"<{rank}I", body, pos)
            pos += 4 * rank
            size = int(np.prod(shape)) if rank else 1
            arr = np.frombuffer(body, dtype="<f4", count=size, offset=pos).reshape(shape)
            pos += 4 * size
            records.append((name, arr))
    except (struct.error, ValueError) as exc:
        raise CheckpointError(f"{path}: truncated checkpoint ({exc})") from None
    if pos != len(body):
        raise CheckpointError(f"{path}: {len(body) - pos} trailing bytes")
    return digest, records


def load_checkpoint(path, model: Model) -> Model:
    """Load parameters and buffers into ``model`` in place."""
    digest, records = _read_checkpoint(path)
    expected = dict(_records(model))
    for name, arr in records:
        if name not in expected:
            raise CheckpointError(f"unexpected parameter '{name}' in checkpoint")
        target = expected[name]
        shape = target.shape
        if tuple(arr.shape) != tuple(shape):
            raise CheckpointError(f"parameter '{name}': checkpoint shape {tuple(arr.shape)} != model shape {tuple(shape)}")
    missing = [n for n in expected if n not in {r[0] for r in records}]
    if missing:
        raise CheckpointError(f"parameter '{missing[0]}' missing from checkpoint")
    if digest != config_digest(model.cfg, model.flags):
        raise CheckpointError("checkpoint was written for a different model configuration")
    for name, arr in records:
        target = expected[name]
        data = target.data if isinstance(target, Tensor) else target
        data[...] = arr
    return model


def load_model(path, cfg: ModelConfig, flags: AblationFlags | None = None, seed: int = 0) -> Model:
    return load_checkpoint(path, build_model(cfg, flags, seed))
