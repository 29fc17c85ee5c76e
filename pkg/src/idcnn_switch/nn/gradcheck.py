"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import logging

import numpy as np

from .layers import ReLU

log = logging.getLogger(__name__)


def _relu_masks(module) -> list[np.ndarray]:
    layers = getattr(module, "layers", [module])
    return [layer.mask.copy() for layer in layers if isinstance(layer, ReLU) and layer.mask is not None]


def _crosses_kink(module, base: list[np.ndarray]) -> bool:
    return any(not np.array_equal(a, b) for a, b in zip(base, _relu_masks(module)))


def grad_check(module, x: np.ndarray, eps: float = 1e-5, rng: np.random.Generator | None = None) -> float:
    """Worst relative error between analytic and finite-difference gradients.

    ``module`` is anything with ``forward(x, train)``, ``backward(g)``,
    ``parameters()`` and ``gradients()`` (a layer or a whole network). The
    scalar probed is ``sum(r * module(x))`` for a fixed random ``r``, and
    every coordinate of the input and of every parameter is perturbed by
    ``+-eps``.

    Errors are measured per tensor as ``max|analytic - numeric|`` divided by
    that tensor's gradient scale, floored at 1e-3 of the largest gradient in
    the whole check so that tensors whose true gradient vanishes (a bias
    feeding batch normalisation) are judged against roundoff, not against 0.

    Coordinates whose perturbation flips a ReLU on or off are skipped: the
    function is not differentiable across the kink and a difference quotient
    straddling it is meaningless.

    Inputs and parameters should be float64.
    """
    rng = rng or np.random.default_rng(0)
    x = np.array(x, dtype=np.float64)
    out = module.forward(x, train=True)
    r = rng.standard_normal(out.shape)
    grad_x = module.backward(r.astype(out.dtype))
    base_masks = _relu_masks(module)
    analytic = [np.zeros_like(x) if grad_x is None else grad_x.copy()]
    analytic += [g.copy() for g in module.gradients()]
    targets = [x] + list(module.parameters())

    def f() -> float:
        return float(np.sum(r * module.forward(x, train=True)))

    numeric = []
    skipped = 0
    for i, arr in enumerate(targets):
        if i == 0 and grad_x is None:
            numeric.append(np.zeros_like(x))
            continue
        num = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        nflat = num.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = f()
            kink = _crosses_kink(module, base_masks)
            flat[j] = orig - eps
            fm = f()
            kink = kink or _crosses_kink(module, base_masks)
            flat[j] = orig
            if kink:
                skipped += 1
                nflat[j] = np.nan
            else:
                nflat[j] = (fp - fm) / (2 * eps)
        numeric.append(num)

    if skipped:
        log.debug("grad_check skipped %d coordinates straddling a ReLU kink", skipped)

    scales = [max(np.max(np.abs(a), initial=0.0), np.nanmax(np.abs(n), initial=0.0)) for a, n in zip(analytic, numeric)]
    floor = max(1e-3 * max(scales, default=0.0), 1e-300)
    worst = 0.0
    for a, n, s in zip(analytic, numeric, scales):
        diff = np.abs(a - n)
        if np.all(np.isnan(diff)):
            continue
        worst = max(worst, float(np.nanmax(diff)) / max(s, floor))
    return worst
