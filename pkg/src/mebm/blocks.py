"""Building blocks of the decoder.

Each block is a pair of functions: ``init_*`` registers parameters in a
:class:`ParamStore`, and the forward function is pure in
``(input, store, mode)`` apart from batch-norm running statistics, which are
updated in training mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .config import ModelConfig
from .rng import counter_uniform, derive_key


@dataclass(frozen=True)
class Mode:
    """Per-call settings: train/eval, and the dropout key material."""

    training: bool = False
    seed: int = 0
    step: int = 0


class ParamStore:
    """Named parameters plus non-trainable buffers (running statistics)."""

    def __init__(self, dtype=np.float32, seed: int = 0):
        self.dtype = np.dtype(dtype)
        self.seed = seed
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def _claim(self, name: str) -> None:
        if name in self.params or name in self.buffers:
            raise KeyError(f"duplicate parameter name '{name}'")

    def add(self, name: str, value: np.ndarray) -> Tensor:
        self._claim(name)
        t = Tensor(np.ascontiguousarray(value, dtype=self.dtype), requires_grad=True)
        self.params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._claim(name)
        arr = np.ascontiguousarray(value, dtype=self.dtype)
        self.buffers[name] = arr
        return arr

    def zeros(self, name: str, shape) -> Tensor:
        return self.add(name, np.zeros(shape))

    def kaiming(self, name: str, shape, fan_in: int) -> Tensor:
        """Kaiming-uniform (fan-in, ReLU gain) from the counter stream of ``name``."""
        bound = math.sqrt(6.0 / fan_in)
        u = counter_uniform(derive_key(self.seed, "init", name), int(np.prod(shape)))
        return self.add(name, ((2.0 * u - 1.0) * bound).reshape(shape))

    def n_trainable(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None


# -- shared pieces -------------------------------------------------------------

def _init_norm(store: ParamStore, name: str, channels: int, cfg: ModelConfig) -> None:
    if cfg.norm == "batch":
        store.add(f"{name}.gamma", np.ones(channels))
        store.add(f"{name}.beta", np.zeros(channels))
        store.add_buffer(f"{name}.running_mean", np.zeros(channels))
        store.add_buffer(f"{name}.running_var", np.ones(channels))


def _norm(h: Tensor, store: ParamStore, name: str, cfg: ModelConfig, mode: Mode) -> Tensor:
    if cfg.norm == "none":
        return h
    return ad.batch_norm(h, store[f"{name}.gamma"], store[f"{name}.beta"],
                         store.buffers[f"{name}.running_mean"], store.buffers[f"{name}.running_var"],
                         training=mode.training, momentum=cfg.bn_momentum, eps=cfg.bn_eps)


def _dropout(h: Tensor, name: str, cfg: ModelConfig, mode: Mode) -> Tensor:
    return ad.dropout(h, cfg.dropout, mode.training, derive_key(mode.seed, "dropout", name, mode.step))


def _init_conv(store: ParamStore, name: str, cout: int, cin_per_group: int, k: int, bias: bool) -> None:
    store.kaiming(f"{name}.weight", (cout, cin_per_group, k), fan_in=cin_per_group * k)
    if bias:
        store.zeros(f"{name}.bias", (cout,))


def _bias(store: ParamStore, name: str):
    key = f"{name}.bias"
    return store[key] if key in store else None


# Convolutions feeding batch-norm carry no bias: the norm cancels it exactly.
def _pre_norm_bias(cfg: ModelConfig) -> bool:
    return cfg.norm == "none"


# -- spatial attention ---------------------------------------------------------------

def init_spatial_attention(store: ParamStore, cfg: ModelConfig, prefix: str = "spatial") -> None:
    store.zeros(f"{prefix}.logits.weight", (cfg.c_in, cfg.c_in))
    store.zeros(f"{prefix}.logits.bias", (cfg.c_in,))
    _init_conv(store, f"{prefix}.proj", cfg.d, cfg.c_in, 1, bias=True)


def sensor_weights(x: Tensor, store: ParamStore, cfg: ModelConfig, prefix: str = "spatial") -> Tensor:
    """Per-sample sensor weights, summing to the sensor count."""
    m = ad.mean(x, axis=2)
    logits = ad.matmul(m, store[f"{prefix}.logits.weight"].T) + store[f"{prefix}.logits.bias"]
    return ad.softmax(logits, axis=1) * float(cfg.c_in)


def spatial_attention(x: Tensor, store: ParamStore, cfg: ModelConfig, mode: Mode,
                      prefix: str = "spatial") -> Tensor:
    if x.ndim != 3 or x.shape[1] != cfg.c_in:
        raise ValueError(f"spatial attention expects (B, {cfg.c_in}, T) input, got {x.shape}")
    w = sensor_weights(x, store, cfg, prefix)
    xw = x * ad.reshape(w, (x.shape[0], cfg.c_in, 1))
    hs = ad.conv1d(xw, store[f"{prefix}.proj.weight"], store[f"{prefix}.proj.bias"])
    return _dropout(hs, prefix, cfg, mode)


# -- multi-scale convolutional block ---------------------------------------------------

def multiscale_dilation(block_index: int, cfg: ModelConfig) -> int:
    return 2 ** (block_index % cfg.ms_dilation_cycle)


def init_multiscale_block(store: ParamStore, cfg: ModelConfig, block_index: int) -> None:
    prefix = f"ms.{block_index}"
    for k in cfg.ms_kernels:
        _init_conv(store, f"{prefix}.k{k}", cfg.d, cfg.d, k, bias=_pre_norm_bias(cfg))
    _init_norm(store, f"{prefix}.norm", cfg.d, cfg)


def multiscale_block(h: Tensor, store: ParamStore, cfg: ModelConfig, mode: Mode, block_index: int) -> Tensor:
    """Parallel same-dilation branches (kernels ``cfg.ms_kernels``), summed.

    Branches sharing a dilation and centered padding sum to a single
    convolution whose kernel is the centered sum of the branch kernels, so
    the branches are merged before convolving.
    """
    prefix = f"ms.{block_index}"
    kmax = max(cfg.ms_kernels)
    merged = None
    bias = None
    for k in cfg.ms_kernels:
        w = store[f"{prefix}.k{k}.weight"]
        if k != kmax:
            edge = (kmax - k) // 2
            w = ad.pad(w, ((0, 0), (0, 0), (edge, edge)))
        merged = w if merged is None else merged + w
        b = _bias(store, f"{prefix}.k{k}")
        if b is not None:
            bias = b if bias is None else bias + b
    y = ad.conv1d(h, merged, bias, dilation=multiscale_dilation(block_index, cfg))
    y = ad.activation(_norm(y, store, f"{prefix}.norm", cfg, mode), cfg.activation)
    return h + y


def receptive_field(kernels_and_dilations) -> int:
    """Receptive field of a stack of stride-1 convolutions."""
    return 1 + sum((k - 1) * d for k, d in kernels_and_dilations)


# -- BM encoder -------------------------------------------------------------------------

def bm_dilations(block_index: int, cfg: ModelConfig) -> tuple[int, int]:
    c = cfg.bm_dilation_cycle
    return 2 ** ((2 * block_index) % c), 2 ** ((2 * block_index + 1) % c)


def init_bm_encoder(store: ParamStore, cfg: ModelConfig, block_index: int) -> None:
    prefix = f"bm.{block_index}"
    k = cfg.bm_kernel
    _init_conv(store, f"{prefix}.conv1", cfg.d, cfg.d, k, bias=_pre_norm_bias(cfg))
    _init_norm(store, f"{prefix}.norm1", cfg.d, cfg)
    _init_conv(store, f"{prefix}.conv2", cfg.d, cfg.d, k, bias=_pre_norm_bias(cfg))
    _init_norm(store, f"{prefix}.norm2", cfg.d, cfg)
    _init_conv(store, f"{prefix}.gate", 2 * cfg.d, cfg.d, 1, bias=True)


def bm_encoder(h: Tensor, store: ParamStore, cfg: ModelConfig, mode: Mode, block_index: int) -> Tensor:
    prefix = f"bm.{block_index}"
    d1, d2 = bm_dilations(block_index, cfg)
    y = ad.conv1d(h, store[f"{prefix}.conv1.weight"], _bias(store, f"{prefix}.conv1"), dilation=d1)
    y = ad.activation(_norm(y, store, f"{prefix}.norm1", cfg, mode), cfg.activation)
    y = ad.conv1d(y, store[f"{prefix}.conv2.weight"], _bias(store, f"{prefix}.conv2"), dilation=d2)
    y = ad.activation(_norm(y, store, f"{prefix}.norm2", cfg, mode), cfg.activation)
    y = ad.glu(ad.conv1d(y, store[f"{prefix}.gate.weight"], store[f"{prefix}.gate.bias"]), axis=1)
    return h + y


# -- fusion ---------------------------------------------------------------------------------

def init_fusion(store: ParamStore, cfg: ModelConfig, in_channels: int, prefix: str = "fuse") -> None:
    _init_conv(store, f"{prefix}.depthwise", in_channels, 1, cfg.fuse_kernel, bias=_pre_norm_bias(cfg))
    _init_conv(store, f"{prefix}.pointwise", cfg.d, in_channels, 1, bias=_pre_norm_bias(cfg))
    _init_norm(store, f"{prefix}.norm", cfg.d, cfg)


def depthwise_separable_fuse(h_cat: Tensor, store: ParamStore, cfg: ModelConfig, mode: Mode,
                             prefix: str = "fuse") -> Tensor:
    w_dw = store[f"{prefix}.depthwise.weight"]
    channels = w_dw.shape[0]
    if h_cat.shape[1] != channels:
        raise ValueError(f"fusion expects {channels} channels, got {h_cat.shape[1]}")
    y = ad.conv1d(h_cat, w_dw, _bias(store, f"{prefix}.depthwise"), groups=channels)
    y = ad.conv1d(y, store[f"{prefix}.pointwise.weight"], _bias(store, f"{prefix}.pointwise"))
    y = ad.activation(_norm(y, store, f"{prefix}.norm", cfg, mode), cfg.activation)
    return _dropout(y, prefix, cfg, mode)


# -- pooling and head ---------------------------------------------------------------------------

def init_attention_pool(store: ParamStore, cfg: ModelConfig, prefix: str = "attn") -> None:
    # No bias: a constant score offset cancels in the softmax over time.
    store.zeros(f"{prefix}.weight", (1, cfg.d, 1))


def attention_weights(h: Tensor, store: ParamStore, prefix: str = "attn") -> Tensor:
    """Softmax over time of the 1-channel score map, shape (B, 1, T)."""
    scores = ad.conv1d(h, store[f"{prefix}.weight"])
    return ad.softmax(scores, axis=2)


def conv_attention_pool(h: Tensor, store: ParamStore, prefix: str = "attn") -> Tensor:
    w = attention_weights(h, store, prefix)
    return ad.sum(h * w, axis=2)


def sum_pool(h: Tensor) -> Tensor:
    return ad.sum(h, axis=2)


def init_classifier_head(store: ParamStore, cfg: ModelConfig, prefix: str = "head") -> None:
    store.kaiming(f"{prefix}.weight", (cfg.n_classes, cfg.d), fan_in=cfg.d)
    store.zeros(f"{prefix}.bias", (cfg.n_classes,))


def classifier_logits(z: Tensor, store: ParamStore, prefix: str = "head") -> Tensor:
    w = store[f"{prefix}.weight"]
    if z.ndim != 2 or z.shape[1] != w.shape[1]:
        raise ValueError(f"classifier expects (B, {w.shape[1]}) features, got {z.shape}")
    return ad.matmul(z, w.T) + store[f"{prefix}.bias"]


def classifier_head(z: Tensor, store: ParamStore, prefix: str = "head") -> Tensor:
    return ad.softmax(classifier_logits(z, store, prefix), axis=1)
