"""The impulse detection network: assembly, training, inference and thresholding."""

from __future__ import annotations

import csv
import logging
from collections.abc import Callable
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .dataset import PatchSet
from .errors import ContractError, FormatError
from .images import as_color_image
from .nn import (
    AdamState,
    BatchNorm2d,
    BatchNormParams,
    Conv2d,
    ConvParams,
    ReLU,
    Record,
    Sequential,
    Sigmoid,
    adam_step,
    glorot_uniform,
    mse_loss,
    read_records,
    write_records,
)
from .noise import as_rng

log = logging.getLogger(__name__)

MIN_PATCH = 21

# cap on the im2col buffer during whole-image inference
_INFER_COLS_BYTES = 64 * 2**20


class IdcnnModel(Sequential):
    """conv+ReLU, then (depth-2) x conv+BN+ReLU, then conv, then sigmoid."""

    def __init__(self, layers, depth: int, filters: int):
        super().__init__(list(layers))
        self.depth = depth
        self.filters = filters

    def forward(self, x: np.ndarray, train: bool = False) -> np.ndarray:
        if x.ndim != 4 or x.shape[1] != 3:
            raise ContractError(f"detector input must be (n, 3, h, w), got {x.shape}")
        if train:
            return super().forward(x, train=True)
        for layer in self.layers:
            x = _infer(layer, x)
        return x

    def count(self, kind: type) -> int:
        return sum(isinstance(layer, kind) for layer in self.layers)


def _infer(layer, x: np.ndarray) -> np.ndarray:
    if not isinstance(layer, Conv2d):
        return layer.forward(x, train=False)
    n, c, h, w = x.shape
    rows = max(1, _INFER_COLS_BYTES // max(1, n * c * 9 * w * x.itemsize))
    if rows >= h:
        return layer.forward(x, train=False)
    out = np.empty((n, layer.params.k_out, h, w), dtype=x.dtype)
    for r0 in range(0, h, rows):
        r1 = min(h, r0 + rows)
        lo, hi = max(0, r0 - 1), min(h, r1 + 1)
        band = layer.forward(x[:, :, lo:hi], train=False)
        out[:, :, r0:r1] = band[:, :, r0 - lo : r0 - lo + (r1 - r0)]
    return out


def build_model(depth: int = 17, filters: int = 64, rng=None, dtype=np.float32) -> IdcnnModel:
    """Glorot-uniform conv kernels, zero biases, BN with gamma=1 and beta=0."""
    if depth < 3:
        raise ContractError(f"depth must be at least 3 (head, body, tail), got {depth}")
    if filters < 1:
        raise ContractError(f"filters must be positive, got {filters}")
    rng = as_rng(rng)

    def conv(c_in, k_out, need_input_grad=True):
        w = glorot_uniform((k_out, c_in, 3, 3), rng, dtype)
        return Conv2d(ConvParams(w, np.zeros(k_out, dtype)), need_input_grad)

    # the network input is data, so the first layer never needs an input gradient
    layers = [conv(3, filters, need_input_grad=False), ReLU()]
    for _ in range(depth - 2):
        layers += [conv(filters, filters), BatchNorm2d(BatchNormParams.fresh(filters, dtype)), ReLU()]
    layers += [conv(filters, 1), Sigmoid()]
    return IdcnnModel(layers, depth, filters)


def image_to_tensor(image, dtype=np.float32) -> np.ndarray:
    img = as_color_image(image)
    return img.transpose(2, 0, 1)[None].astype(dtype) / np.array(255, dtype)


def forward(model: IdcnnModel, image) -> np.ndarray:
    """Impulse probability for every pixel of a color image, in one pass.

    Channel values are scaled to [0, 1]; batch normalisation uses its
    running statistics. Returns an ``(h, w)`` float array in (0, 1).
    """
    img = as_color_image(image)
    if min(img.shape[:2]) < 3:
        raise ContractError(f"image must be at least 3x3, got {img.shape[:2]}")
    out = model.forward(image_to_tensor(img, model.dtype), train=False)
    return out[0, 0]


def detect(model: IdcnnModel, image, threshold: float = 0.5) -> np.ndarray:
    """Binary impulse map: a pixel is flagged when its probability is >= threshold."""
    check_threshold(threshold)
    return forward(model, image) >= threshold


def check_threshold(threshold: float) -> None:
    if not 0.0 < threshold < 1.0:
        raise ContractError(f"threshold must lie in (0, 1), got {threshold}")


# -- training ----------------------------------------------------------------


@dataclass
class TrainConfig:
    epochs: int = 50
    lr: float = 1e-3
    lr_decay: float = 0.1
    decay_epoch: int = 30
    batch_size: int = 128
    patch_size: int = 41
    train_noise: str = "0.3"  # a density, or "random" for U(0.1, 0.5) per patch
    noise_model: str = "ctri"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ContractError("epochs must be >= 1")
        if not self.lr > 0:
            raise ContractError("learning rate must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ContractError("lr_decay must lie in (0, 1]")
        if self.batch_size < 1:
            raise ContractError("batch_size must be >= 1")
        if self.patch_size < MIN_PATCH:
            raise ContractError(f"patch size must be at least {MIN_PATCH}, got {self.patch_size}")

    def learning_rate(self, epoch: int) -> float:
        """Rate for a 1-based epoch: decayed once ``decay_epoch`` epochs are done."""
        return self.lr * (self.lr_decay if epoch > self.decay_epoch else 1.0)

    def as_header(self) -> dict[str, str]:
        return {f"train.{k}": str(v) for k, v in asdict(self).items()}

    @classmethod
    def from_header(cls, header: dict[str, str]) -> "TrainConfig":
        kwargs = {}
        for f in fields(cls):
            value = header.get(f"train.{f.name}")
            if value is not None:
                kwargs[f.name] = _CASTS.get(f.name, str)(value)
        return cls(**kwargs)


_CASTS = {
    "epochs": int, "lr": float, "lr_decay": float, "decay_epoch": int,
    "batch_size": int, "patch_size": int, "seed": int,
}


@dataclass
class TrainingState:
    """Everything needed to continue a run: epochs done, optimizer, losses."""

    epoch: int = 0
    adam: AdamState = field(default_factory=AdamState)
    history: list[float] = field(default_factory=list)


def _as_patchset(patches) -> PatchSet:
    if isinstance(patches, PatchSet):
        if len(patches) == 0:
            raise ContractError("empty patch set")
        return patches
    return PatchSet.from_pairs(patches)


def batch_tensors(ps: PatchSet, idx: np.ndarray, dtype) -> tuple[np.ndarray, np.ndarray]:
    x = ps.noisy[idx].transpose(0, 3, 1, 2).astype(dtype) / np.array(255, dtype)
    y = ps.maps[idx][:, None].astype(dtype)
    return x, y


def train_step(model: IdcnnModel, x: np.ndarray, y: np.ndarray, adam: AdamState) -> float:
    pred = model.forward(x, train=True)
    loss, grad = mse_loss(pred, y)
    model.backward(grad)
    adam_step(model.parameters(), model.gradients(), adam)
    return loss


def train(
    model: IdcnnModel,
    patches,
    config: TrainConfig,
    state: TrainingState | None = None,
    on_epoch_end: Callable[[IdcnnModel, TrainingState], None] | None = None,
) -> tuple[IdcnnModel, list[float]]:
    """Mini-batch ADAM on the per-pixel squared error between maps.

    Patch order is reshuffled every epoch from a generator seeded by
    ``(config.seed, epoch)``, so a run resumed from ``state`` replays
    exactly the batches an uninterrupted run would have seen. The last,
    partial batch of an epoch is kept. Returns the model and the mean
    training loss of every epoch completed so far.
    """
    ps = _as_patchset(patches)
    if ps.p != config.patch_size:
        raise ContractError(f"patches are {ps.p}x{ps.p} but config.patch_size is {config.patch_size}")
    if np.any(ps.maps > 1):
        raise ContractError("ground-truth maps must be binary")
    state = state or TrainingState()
    if not state.adam.m:
        state.adam = AdamState.for_params(model.parameters(), lr=config.lr)
    dtype = model.dtype
    n = len(ps)
    for epoch in range(state.epoch + 1, config.epochs + 1):
        state.adam.lr = config.learning_rate(epoch)
        order = np.random.default_rng([config.seed, epoch]).permutation(n)
        total = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            x, y = batch_tensors(ps, idx, dtype)
            total += train_step(model, x, y, state.adam) * len(idx)
        state.history.append(total / n)
        state.epoch = epoch
        log.info("epoch %d/%d lr=%g loss=%.6f", epoch, config.epochs, state.adam.lr, state.history[-1])
        if on_epoch_end is not None:
            on_epoch_end(model, state)
    return model, list(state.history)


# -- persistence -------------------------------------------------------------


def save_model(
    path, model: IdcnnModel, config: TrainConfig | None = None, state: TrainingState | None = None
) -> None:
    """Write a checkpoint; optimizer moments are included when ``state`` is given."""
    header = {"format": "idcnn", "depth": str(model.depth), "filters": str(model.filters)}
    if config is not None:
        header.update(config.as_header())
    extras = []
    if state is not None:
        header["epoch"] = str(state.epoch)
        header["loss_history"] = ",".join(repr(v) for v in state.history)
        a = state.adam
        header.update({"adam.t": str(a.t), "adam.lr": repr(a.lr), "adam.beta1": repr(a.beta1),
                       "adam.beta2": repr(a.beta2), "adam.eps": repr(a.eps)})
        extras.append(Record("ADAM", list(a.m) + list(a.v)))
    layers = [Record(layer.tag, layer.state()) for layer in model.layers]
    write_records(path, header, layers, extras)


def load_model(path, dtype=np.float32) -> tuple[IdcnnModel, dict[str, str], TrainingState | None]:
    """Read a checkpoint back into ``(model, header, training_state_or_None)``."""
    header, records, extras = read_records(path)
    if header.get("format") != "idcnn":
        raise FormatError(f"{path}: not an IDCNN checkpoint")
    layers = []
    try:
        for rec in records:
            t = [a.astype(dtype) for a in rec.tensors]
            if rec.tag == "CONV":
                layers.append(Conv2d(ConvParams(t[0], t[1]), need_input_grad=bool(layers)))
            elif rec.tag == "BNRM":
                layers.append(BatchNorm2d(BatchNormParams(*t)))
            elif rec.tag == "RELU":
                layers.append(ReLU())
            elif rec.tag == "SIGM":
                layers.append(Sigmoid())
            else:
                raise FormatError(f"{path}: unknown layer tag {rec.tag!r}")
        model = IdcnnModel(layers, int(header["depth"]), int(header["filters"]))
    except (KeyError, IndexError, ValueError, TypeError) as exc:
        if isinstance(exc, FormatError):
            raise
        raise FormatError(f"{path}: inconsistent checkpoint ({exc})") from exc

    state = None
    adam_rec = [r for r in extras if r.tag == "ADAM"]
    if "epoch" in header:
        hist = header.get("loss_history", "")
        state = TrainingState(epoch=int(header["epoch"]), history=[float(v) for v in hist.split(",") if v])
        if adam_rec:
            moments = [a.astype(dtype) for a in adam_rec[0].tensors]
            k = len(moments) // 2
            state.adam = AdamState(
                lr=float(header["adam.lr"]), beta1=float(header["adam.beta1"]),
                beta2=float(header["adam.beta2"]), eps=float(header["adam.eps"]),
                t=int(header["adam.t"]), m=moments[:k], v=moments[k:],
            )
    return model, header, state


def write_loss_csv(path, history: list[float], comments: dict[str, str] | None = None) -> None:
    with open(path, "w", newline="") as f:
        for k, v in (comments or {}).items():
            f.write(f"# {k}={v}\n")
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epoch", "mean_loss"])
        for i, loss in enumerate(history, 1):
            w.writerow([i, repr(loss)])
