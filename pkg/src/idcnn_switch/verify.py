"""Self-verification: gradient checks and oracle comparisons.

Backs the ``verify`` command. Every check compares a fast code path with
an independent route (finite differences or a literal loop transcription)
and reports the worst discrepancy against a fixed limit.
"""

from __future__ import annotations

import time
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from . import metrics, reference
from .idcnn import IdcnnModel, build_model
from .nn import (
    BatchNorm2d,
    BatchNormParams,
    Conv2d,
    ConvParams,
    ReLU,
    Sigmoid,
    conv2d,
    grad_check,
    mse_loss,
)
from .restore import adaptive_mean_restore

GRAD_LIMIT = 1e-5
ORACLE_LIMIT = 1e-6
EXACT_LIMIT = 1e-9


@dataclass
class CheckResult:
    name: str
    value: float
    limit: float
    seconds: float

    @property
    def passed(self) -> bool:
        return bool(self.value < self.limit)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status}  {self.name:<28} worst={self.value:.3e}  limit={self.limit:.0e}  ({self.seconds:.2f}s)"


class FaultyConv2d(Conv2d):
    """Convolution whose weight gradient is deliberately doubled."""

    def backward(self, grad_out):
        grad_x = super().backward(grad_out)
        self._grads.weight = self._grads.weight * 2
        return grad_x


def _conv_layer(rng, c_in, k_out, cls=Conv2d) -> Conv2d:
    return cls(ConvParams(rng.standard_normal((k_out, c_in, 3, 3)) * 0.5, rng.standard_normal(k_out) * 0.1))


def small_model(depth: int = 5, filters: int = 4, seed: int = 0, faulty: bool = False) -> IdcnnModel:
    """A float64 detector whose input gradient is also computed."""
    model = build_model(depth, filters, rng=seed, dtype=np.float64)
    rng = np.random.default_rng(seed + 1)
    for layer in model.layers:
        if isinstance(layer, Conv2d):
            layer.params.bias[...] = rng.standard_normal(layer.params.k_out) * 0.1
            layer.need_input_grad = True
        if isinstance(layer, BatchNorm2d):
            layer.params.gamma[...] = rng.uniform(0.5, 1.5, layer.params.channels)
            layer.params.beta[...] = rng.standard_normal(layer.params.channels) * 0.1
    if faulty:
        for i, layer in enumerate(model.layers):
            if isinstance(layer, Conv2d):
                bad = FaultyConv2d(layer.params, need_input_grad=True)
                model.layers[i] = bad
    return model


def layer_grad_errors(seed: int = 0, fault: bool = False) -> dict[str, float]:
    """Worst gradient-check error for each layer type and for the loss."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((1, 4, 8, 8))
    conv_cls = FaultyConv2d if fault else Conv2d
    bn = BatchNorm2d(BatchNormParams(rng.uniform(0.5, 1.5, 4), rng.standard_normal(4), np.zeros(4), np.ones(4)))
    out = {
        "grad conv2d": grad_check(_conv_layer(rng, 4, 3, conv_cls), x, rng=rng),
        "grad batchnorm": grad_check(bn, x, rng=rng),
        "grad relu": grad_check(ReLU(), x, rng=rng),
        "grad sigmoid": grad_check(Sigmoid(), x, rng=rng),
    }
    pred, target = rng.uniform(0, 1, (2, 1, 5, 5)), (rng.random((2, 1, 5, 5)) < 0.3).astype(float)
    _, grad = mse_loss(pred, target)
    num = np.zeros_like(pred)
    eps = 1e-6
    for idx in np.ndindex(pred.shape):
        p = pred.copy()
        p[idx] += eps
        fp = mse_loss(p, target)[0]
        p[idx] -= 2 * eps
        fm = mse_loss(p, target)[0]
        num[idx] = (fp - fm) / (2 * eps)
    out["grad mse_loss"] = float(np.max(np.abs(num - grad)) / np.max(np.abs(grad)))
    return out


def conv_oracle_error(trials: int, seed: int = 0) -> float:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        n, c, k = rng.integers(1, 3), rng.integers(1, 4), rng.integers(1, 5)
        h, w = rng.integers(1, 17, size=2)
        x = rng.standard_normal((n, c, h, w))
        wt, b = rng.standard_normal((k, c, 3, 3)), rng.standard_normal(k)
        fast = conv2d(x, ConvParams(wt, b))
        slow = reference.conv2d_loops(x, wt, b)
        worst = max(worst, float(np.max(np.abs(fast - slow)) / max(np.max(np.abs(slow)), 1e-12)))
    return worst


def _rel(a: float, b: float) -> float:
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def random_image_pair(rng, h, w, spread: int = 40) -> tuple[np.ndarray, np.ndarray]:
    a = rng.integers(0, 256, (h, w, 3), dtype=np.uint8)
    delta = rng.integers(-spread, spread + 1, (h, w, 3))
    b = np.clip(a.astype(int) + delta * (rng.random((h, w, 1)) < 0.5), 0, 255).astype(np.uint8)
    return a, b


def metric_oracle_errors(trials: int, seed: int = 0, ssim_trials: int | None = None) -> dict[str, float]:
    rng = np.random.default_rng(seed)
    worst = {"oracle mse_loss": 0.0, "oracle psnr": 0.0, "oracle mae": 0.0,
             "oracle ssim_c": 0.0, "oracle confusion": 0.0}
    ssim_trials = trials if ssim_trials is None else ssim_trials
    for t in range(trials):
        h, w = rng.integers(1, 17, size=2)
        a, b = random_image_pair(rng, h, w)
        worst["oracle psnr"] = max(worst["oracle psnr"], _rel(metrics.psnr(a, b), reference.psnr_loops(a, b)))
        worst["oracle mae"] = max(worst["oracle mae"], _rel(metrics.mae(a, b), reference.mae_loops(a, b)))
        truth, est = rng.random((h, w)) < 0.3, rng.random((h, w)) < 0.3
        c = metrics.confusion(truth, est)
        mismatch = (c.tp, c.tn, c.fp, c.fn) != reference.confusion_loops(truth, est)
        worst["oracle confusion"] = max(worst["oracle confusion"], float(mismatch))
        pred, target = rng.uniform(0, 1, (2, 1, h, w)), rng.uniform(0, 1, (2, 1, h, w))
        worst["oracle mse_loss"] = max(worst["oracle mse_loss"], _rel(mse_loss(pred, target)[0], reference.mse_loss_loops(pred, target)))
        if t < ssim_trials:
            sh, sw = rng.integers(11, 17, size=2)
            a, b = random_image_pair(rng, sh, sw)
            worst["oracle ssim_c"] = max(worst["oracle ssim_c"], _rel(metrics.ssim_c(a, b), reference.ssim_direct(a, b)))
    return worst


def restore_oracle_mismatches(trials: int, seed: int = 0, size: int = 16) -> int:
    """Cases where restoration differs from brute force or touches a clean pixel."""
    rng = np.random.default_rng(seed)
    bad = 0
    for t in range(trials):
        rho = 0.1 * (1 + t % 9)
        img = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
        flagged = rng.random((size, size)) < rho
        if flagged.all():
            flagged[rng.integers(size), rng.integers(size)] = False
        fast = adaptive_mean_restore(img, flagged)
        slow = reference.restore_bruteforce(img, flagged)
        if not np.array_equal(fast, slow) or not np.array_equal(fast[~flagged], img[~flagged]):
            bad += 1
    return bad


def _timed(name: str, limit: float, fn: Callable[[], float]) -> CheckResult:
    start = time.perf_counter()
    value = fn()
    return CheckResult(name, float(value), limit, time.perf_counter() - start)


def run_checks(fault: bool = False, seed: int = 0) -> list[CheckResult]:
    """All self-checks. With ``fault`` the conv weight gradient is sabotaged."""
    results = []
    start = time.perf_counter()
    layer_errs = layer_grad_errors(seed, fault)
    elapsed = time.perf_counter() - start
    for name, err in layer_errs.items():
        results.append(CheckResult(name, err, GRAD_LIMIT, elapsed / len(layer_errs)))
    rng = np.random.default_rng(seed)
    results.append(_timed(
        "grad full model (depth 5)", GRAD_LIMIT,
        lambda: grad_check(small_model(5, 4, seed, faulty=fault), rng.standard_normal((1, 3, 8, 8)), rng=rng),
    ))
    results.append(_timed("oracle conv2d", ORACLE_LIMIT, lambda: conv_oracle_error(20, seed)))
    start = time.perf_counter()
    m_errs = metric_oracle_errors(50, seed, ssim_trials=5)
    elapsed = time.perf_counter() - start
    for name, err in m_errs.items():
        limit = EXACT_LIMIT if name in ("oracle psnr", "oracle mae", "oracle confusion") else ORACLE_LIMIT
        results.append(CheckResult(name, err, limit, elapsed / len(m_errs)))
    results.append(_timed("oracle restoration", 0.5, lambda: restore_oracle_mismatches(50, seed)))
    return results
