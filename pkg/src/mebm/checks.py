"""Finite-difference gradient suite over every differentiable op and a tiny model."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, finite_diff_check
from .config import AblationFlags, ModelConfig

TOLERANCE = 1e-4

# Each case is (inputs, call).  Every input is checked, and the op output is
# contracted with a fixed random tensor so all output coordinates contribute.
OPS: dict[str, Callable] = {
    "add": ad.add, "sub": ad.sub, "mul": ad.mul, "div": ad.div, "neg": ad.neg,
    "exp": ad.exp, "log": ad.log, "power": ad.power, "sqrt": ad.sqrt,
    "matmul": ad.matmul, "sum": ad.sum, "mean": ad.mean, "reshape": ad.reshape,
    "transpose": ad.transpose, "getitem": ad.getitem, "concat": ad.concat, "split": ad.split,
    "pad": ad.pad, "softmax": ad.softmax, "log_softmax": ad.log_softmax, "relu": ad.relu,
    "sigmoid": ad.sigmoid, "gelu": ad.gelu, "glu": ad.glu, "conv1d": ad.conv1d,
    "batch_norm": ad.batch_norm, "dropout": ad.dropout,
}


@dataclass
class CheckResult:
    op: str
    max_rel_error: float
    passed: bool
    seconds: float


def _scalar(out, rng) -> Tensor:
    outs = out if isinstance(out, (list, tuple)) else [out]
    total = None
    for o in outs:
        r = Tensor(rng.standard_normal(o.shape))
        term = ad.sum(o * r)
        total = term if total is None else total + term
    return total


def _check_inputs(op: Callable, inputs: list[np.ndarray], call: Callable, name: str) -> float:
    proj_seed = sum(map(ord, name)) + 1
    tensors = [Tensor(np.array(a, dtype=np.float64)) for a in inputs]

    def f(_):
        return _scalar(call(op, *tensors), np.random.default_rng(proj_seed))

    return max(finite_diff_check(f, t) for t in tensors)


def _cases() -> dict[str, tuple[list[np.ndarray], Callable]]:
    g = np.random.default_rng(1234)
    n = g.standard_normal
    pos = lambda *s: g.uniform(0.5, 2.0, s)  # noqa: E731
    rm, rv = np.zeros(4), np.ones(4)
    return {
        "add": ([n((3, 4)), n((4,))], lambda op, a, b: op(a, b)),
        "sub": ([n((3, 4)), n((3, 1))], lambda op, a, b: op(a, b)),
        "mul": ([n((3, 4)), n((1, 4))], lambda op, a, b: op(a, b)),
        "div": ([n((3, 4)), pos(3, 4)], lambda op, a, b: op(a, b)),
        "neg": ([n((5,))], lambda op, a: op(a)),
        "exp": ([n((3, 4))], lambda op, a: op(a)),
        "log": ([pos(3, 4)], lambda op, a: op(a)),
        "power": ([pos(3, 4)], lambda op, a: op(a, 2.5)),
        "sqrt": ([pos(3, 4)], lambda op, a: op(a)),
        "matmul": ([n((3, 5)), n((5, 2))], lambda op, a, b: op(a, b)),
        "sum": ([n((2, 3, 4))], lambda op, a: op(a, axis=1)),
        "mean": ([n((2, 3, 4))], lambda op, a: op(a, axis=(0, 2), keepdims=True)),
        "reshape": ([n((2, 6))], lambda op, a: op(a, (3, 4))),
        "transpose": ([n((2, 3, 4))], lambda op, a: op(a, (2, 0, 1))),
        "getitem": ([n((4, 5))], lambda op, a: op(a, (slice(1, 3), [0, 2, 2]))),
        "concat": ([n((2, 3)), n((2, 2))], lambda op, a, b: op([a, b], axis=1)),
        "split": ([n((2, 6))], lambda op, a: op(a, 3, axis=1)),
        "pad": ([n((2, 3))], lambda op, a: op(a, ((0, 0), (2, 1)))),
        "softmax": ([n((3, 5))], lambda op, a: op(a, axis=1)),
        "log_softmax": ([n((3, 5))], lambda op, a: op(a, axis=1)),
        "relu": ([n((4, 5))], lambda op, a: op(a)),
        "sigmoid": ([n((4, 5))], lambda op, a: op(a)),
        "gelu": ([n((4, 5))], lambda op, a: op(a)),
        "glu": ([n((2, 6, 3))], lambda op, a: op(a, axis=1)),
        "conv1d": ([n((2, 3, 9)), n((4, 3, 3)), n((4,))], lambda op, x, w, b: op(x, w, b, dilation=2)),
        "conv1d_depthwise": ([n((2, 4, 8)), n((4, 1, 3))], lambda op, x, w: op(x, w, groups=4)),
        "conv1d_grouped": ([n((2, 4, 8)), n((6, 2, 5))], lambda op, x, w: op(x, w, groups=2)),
        "batch_norm": ([n((3, 4, 5)), pos(4), n((4,))],
                       lambda op, x, gm, bt: op(x, gm, bt, rm.copy(), rv.copy(), training=True)),
        "dropout": ([n((3, 8))], lambda op, a: op(a, 0.25, True, key=7)),
    }


def tiny_model_config() -> ModelConfig:
    return ModelConfig(c_in=6, t=16, d=8, n_classes=5, n_multiscale_blocks=2, n_bm_blocks=1,
                       dtype="float64")


def check_tiny_model(flags: AblationFlags | None = None, seed: int = 0) -> float:
    """Max relative error over every parameter of a tiny model under weighted CE."""
    from .model import build_model, forward_logits
    from .training import weighted_cross_entropy

    cfg = tiny_model_config()
    model = build_model(cfg, flags or AblationFlags(), seed)
    g = np.random.default_rng(99)
    # Move zero-initialized parameters off zero so every path carries gradient.
    for p in model.params.values():
        p.data += 0.1 * g.standard_normal(p.shape)
    x = g.standard_normal((3, cfg.c_in, cfg.t))
    y = np.array([0, 3, 1])
    w = np.array([1.0, 2.0, 0.5, 3.0, 1.0])

    def f(_):
        return weighted_cross_entropy(forward_logits(model, x, training=True, step=1), y, w)

    return max(finite_diff_check(f, p) for p in model.params.values())


def run_gradcheck(names=None, overrides: Mapping[str, Callable] | None = None, tol: float = TOLERANCE,
                  include_model: bool = True) -> list[CheckResult]:
    """Run the suite; ``overrides`` replaces an op implementation (by base op name)."""
    ops = {**OPS, **(overrides or {})}
    cases = _cases()
    selected = list(cases) if names is None else list(names)
    results = []
    for name in selected:
        if name == "model":
            continue
        inputs, call = cases[name]
        op = ops[name.removesuffix("_depthwise").removesuffix("_grouped")]
        t0 = time.perf_counter()
        err = _check_inputs(op, inputs, call, name)
        results.append(CheckResult(name, err, err < tol, time.perf_counter() - t0))
    if include_model and (names is None or "model" in names):
        t0 = time.perf_counter()
        err = check_tiny_model()
        results.append(CheckResult("model", err, err < tol, time.perf_counter() - t0))
    return results


def format_results(results: list[CheckResult]) -> str:
    lines = [f"{'op':<18}{'max rel err':>14}  status"]
    for r in results:
        lines.append(f"{r.op:<18}{r.max_rel_error:>14.3e}  {'ok' if r.passed else 'FAIL'}")
    return "\n".join(lines)
