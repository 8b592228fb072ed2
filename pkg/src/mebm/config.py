"""Architecture configuration and ablation switches."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass


@dataclass(frozen=True)
class ModelConfig:
    c_in: int = 306
    t: int = 125
    d: int = 128
    n_classes: int = 39
    n_multiscale_blocks: int = 12
    n_bm_blocks: int = 3
    dropout: float = 0.02
    activation: str = "gelu"
    norm: str = "batch"
    ms_kernels: tuple[int, ...] = (3, 5, 7)
    ms_dilation_cycle: int = 3
    bm_kernel: int = 3
    bm_dilation_cycle: int = 5
    fuse_kernel: int = 3
    bn_momentum: float = 0.1
    bn_eps: float = 1e-5
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "ms_kernels", tuple(int(k) for k in self.ms_kernels))
        self.validate()

    def validate(self) -> None:
        for name in ("c_in", "t", "d", "n_classes", "ms_dilation_cycle", "bm_dilation_cycle"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("n_multiscale_blocks", "n_bm_blocks"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError(f"dropout must lie in [0, 1), got {self.dropout}")
        kernels = (*self.ms_kernels, self.bm_kernel, self.fuse_kernel)
        if not self.ms_kernels or any(k < 1 or k % 2 == 0 for k in kernels):
            raise ValueError(f"kernel sizes must be odd and positive, got {kernels}")
        if self.activation not in ("gelu", "relu"):
            raise ValueError(f"unknown activation '{self.activation}'")
        if self.norm not in ("batch", "none"):
            raise ValueError(f"unknown norm '{self.norm}'")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"dtype must be float32 or float64, got '{self.dtype}'")

    def to_dict(self) -> dict:
        out = dataclasses.asdict(self)
        out["ms_kernels"] = list(self.ms_kernels)
        return out


@dataclass(frozen=True)
class AblationFlags:
    use_weighted_loss: bool = True
    use_multiscale: bool = True
    use_bm_encoder: bool = True
    use_conv_attention: bool = True

    def __post_init__(self):
        if not (self.use_multiscale or self.use_bm_encoder):
            raise ValueError("at least one temporal stream (multi-scale or BM encoder) must be enabled")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


# Row order of the ablation table.
VARIANTS: dict[str, AblationFlags] = {
    "Full Model": AblationFlags(),
    "w/o Weighted Loss": AblationFlags(use_weighted_loss=False),
    "w/o Multi-scale Conv": AblationFlags(use_multiscale=False),
    "w/o BM Encoder": AblationFlags(use_bm_encoder=False),
    "w/o Conv. Attention": AblationFlags(use_conv_attention=False),
}


def config_digest(cfg: ModelConfig, flags: AblationFlags) -> bytes:
    """SHA-256 of the canonical JSON of the architecture."""
    doc = {"model": cfg.to_dict(), "flags": flags.to_dict()}
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).digest()


def from_dict(cls, doc: dict):
    """Build a config dataclass, rejecting unknown keys."""
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - names)
    if unknown:
        raise ValueError(f"unknown {cls.__name__} keys: {', '.join(unknown)}")
    return cls(**doc)


__all__ = ["AblationFlags", "ModelConfig", "VARIANTS", "config_digest", "from_dict"]
