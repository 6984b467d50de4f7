"""Toy convolutional backbone with per-block feature taps and freezing.

Four blocks of (conv3x3 stride 2, conv3x3 stride 1), both silu, channels
8/16/32/64 over a 3x64x64 input, giving taps of 8x32x32, 16x16x16, 32x8x8
and 64x4x4. A side extractor built from the same spec has identical tap
shapes at every block, which is what makes fusion shape-safe.

"Upstream pretraining" is a supervised proxy: classify scenes into vehicle
counts {0, 1, 2+}; the resulting backbone weights play the role of generic
upstream features for every fine-tuning mode.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .engine import Parameter, Tensor
from .engine.layers import Conv2dLayer, DenseLayer, load_state, state_dict
from .engine.optim import make_optimizer, zero_grad
from .synthdata import ProxyDataset

_T_INIT = 21
_T_SHUFFLE = 22


@dataclass(frozen=True)
class BackboneSpec:
    in_channels: int = 3
    input_size: int = 64
    block_channels: tuple[int, ...] = (8, 16, 32, 64)

    def tap_shapes(self) -> list[tuple[int, int, int]]:
        size = self.input_size
        shapes = []
        for c in self.block_channels:
            size //= 2
            shapes.append((c, size, size))
        return shapes


@dataclass(frozen=True)
class FreezePlan:
    freeze_backbone: bool = True
    freeze_side: bool = True


# silu attenuates more than relu; this gain keeps activation variance
# roughly constant through the 8-conv stack so gradients reach block 1
_SILU_GAIN = 1.45


class _Block:
    def __init__(self, prefix: str, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv1 = Conv2dLayer(f"{prefix}.conv1", c_in, c_out, 3, 2, 1, rng,
                                 gain=_SILU_GAIN)
        self.conv2 = Conv2dLayer(f"{prefix}.conv2", c_out, c_out, 3, 1, 1, rng,
                                 gain=_SILU_GAIN)

    def __call__(self, x: Tensor) -> Tensor:
        return eg.silu(self.conv2(eg.silu(self.conv1(x))))

    @property
    def params(self) -> list[Parameter]:
        return self.conv1.params + self.conv2.params


class Backbone:
    """Feature extractor exposing one tap per block."""

    def __init__(self, spec: BackboneSpec, prefix: str, rng: np.random.Generator):
        self.spec = spec
        self.prefix = prefix
        self.blocks: list[_Block] = []
        c_in = spec.in_channels
        for i, c_out in enumerate(spec.block_channels, start=1):
            self.blocks.append(_Block(f"{prefix}.block{i}", c_in, c_out, rng))
            c_in = c_out

    def forward_taps(self, x: Tensor) -> list[Tensor]:
        expected = (self.spec.in_channels, self.spec.input_size, self.spec.input_size)
        shape = x.data.shape[-3:]
        if tuple(shape) != expected or x.data.ndim not in (3, 4):
            raise ValueError(f"backbone expects {expected} images, got {tuple(x.shape)}")
        taps = []
        h = x
        for block in self.blocks:
            h = block(h)
            taps.append(h)
        return taps

    @property
    def params(self) -> list[Parameter]:
        return [p for b in self.blocks for p in b.params]


def backbone_forward(image: Tensor, spec: BackboneSpec, backbone: Backbone) -> list[Tensor]:
    """Functional wrapper: all four tap tensors for one image."""
    if backbone.spec != spec:
        raise ValueError("backbone instance does not match the given spec")
    return backbone.forward_taps(image)


_FREEZE_GROUPS = ("backbone", "side", "head", "fusion")


def freeze_group(params: list[Parameter], group: str) -> None:
    if group not in _FREEZE_GROUPS:
        raise ValueError(f"unknown parameter group '{group}' (expected one of {_FREEZE_GROUPS})")
    matching = [p for p in params if p.name.startswith(group + ".")]
    if not matching:
        raise ValueError(f"no parameters under group '{group}'")
    for p in matching:
        p.freeze()


def apply_freeze(params: list[Parameter], plan: FreezePlan) -> None:
    """Freeze whole parameter groups; head/neck stay trainable by design."""
    if plan.freeze_backbone:
        freeze_group(params, "backbone")
    if plan.freeze_side:
        freeze_group(params, "side")


@dataclass
class PretrainResult:
    state: dict[str, np.ndarray]        # backbone-only checkpoint
    full_state: dict[str, np.ndarray]   # backbone + proxy readout, for audits
    epoch_losses: list[float]


class _ProxyClassifier:
    """Count readout plus an auxiliary detection head over the final tap.

    The auxiliary objective is what makes the checkpoint useful downstream:
    count classification alone never pressures the features to keep the
    sub-cell phase information a detection head needs.
    """

    def __init__(self, spec: BackboneSpec, seed: int):
        from .detect import DetectHead

        rng = np.random.default_rng(np.random.SeedSequence([seed, _T_INIT]))
        self.backbone = Backbone(spec, "backbone", rng)
        self.fc = DenseLayer("cls.fc", spec.block_channels[-1], 3, rng)
        self.aux = DetectHead("aux", spec.block_channels[-1], rng)

    def _tap(self, images: Tensor) -> Tensor:
        return self.backbone.forward_taps(images)[-1]

    def logits(self, images: Tensor) -> Tensor:
        return self.fc(eg.global_avg_pool(self._tap(images)))

    @property
    def params(self) -> list[Parameter]:
        return self.backbone.params + self.fc.params + self.aux.params


def _flip_scene(img: np.ndarray, boxes: list, flip_h: bool, flip_v: bool,
                frame: int = 64) -> tuple[np.ndarray, list]:
    from .detect import GtBox

    if flip_h:
        img = img[:, :, ::-1]
        boxes = [GtBox(frame - b.x2, b.y1, frame - b.x1, b.y2) for b in boxes]
    if flip_v:
        img = img[:, ::-1, :]
        boxes = [GtBox(b.x1, frame - b.y2, b.x2, frame - b.y1) for b in boxes]
    return img, boxes


def upstream_pretrain(spec: BackboneSpec, proxy: ProxyDataset, epochs: int,
                      seed: int, batch_size: int = 32, learning_rate: float = 3e-3,
                      optimizer: str = "adam", weight_decay: float = 3e-3,
                      label_smoothing: float = 0.1, aux_detection: bool = True,
                      augment: bool = True) -> PretrainResult:
    """Train the proxy count classifier; return the backbone-only state dict.

    Both pretraining heads (the count readout and the auxiliary detection
    head) are dropped from the checkpoint, mirroring how upstream weights
    arrive without their task heads. Label smoothing plus decoupled weight
    decay keep the unnormalized feature scale bounded so downstream heads
    can actually train on the frozen features.
    """
    from .detect import detection_loss

    model = _ProxyClassifier(spec, seed)
    losses: list[float] = []
    if epochs > 0:
        opt = make_optimizer(optimizer, model.params, learning_rate,
                             weight_decay=weight_decay if optimizer == "adam" else 0.0)
        shuffle = np.random.default_rng(np.random.SeedSequence([seed, _T_SHUFFLE]))
        aug_rng = np.random.default_rng(np.random.SeedSequence([seed, _T_SHUFFLE, 1]))
        cls_w = proxy.cls_mask.astype(np.float32)
        n = len(proxy.images)
        for epoch in range(1, epochs + 1):
            order = shuffle.permutation(n)
            epoch_losses = []
            for start in range(0, n, batch_size):
                idx = order[start:start + batch_size]
                images = proxy.images[idx]
                boxes = [proxy.boxes[i] for i in idx]
                if augment:
                    flips = aug_rng.integers(0, 2, size=(len(idx), 2))
                    images = images.copy()
                    for j in range(len(idx)):
                        images[j], boxes[j] = _flip_scene(
                            images[j], boxes[j], bool(flips[j, 0]), bool(flips[j, 1]))
                    images = np.ascontiguousarray(images)
                tap = model._tap(Tensor(images))
                # count supervision only where the label is trustworthy
                per_row = eg.softmax_cross_entropy(
                    model.fc(eg.global_avg_pool(tap)), proxy.labels[idx],
                    label_smoothing=label_smoothing)
                w = cls_w[idx]
                loss = eg.mul(per_row, Tensor(w)).sum() * (1.0 / max(1.0, w.sum()))
                if aux_detection:
                    loss = loss + detection_loss(model.aux(tap), boxes)
                value = loss.item()
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"upstream pretraining diverged: non-finite loss at "
                        f"epoch {epoch} step {start // batch_size}")
                zero_grad(model.params)
                loss.backward()
                opt.step()
                epoch_losses.append(value)
            losses.append(float(np.mean(epoch_losses)))
    return PretrainResult(state_dict(model.backbone.params),
                          state_dict(model.params), losses)


def proxy_accuracy(full_state: dict[str, np.ndarray], spec: BackboneSpec,
                   proxy: ProxyDataset, batch_size: int = 64) -> float:
    """Held-out count accuracy on the classification-supervised scenes."""
    model = _ProxyClassifier(spec, seed=0)
    load_state(model.params, full_state)
    keep = np.flatnonzero(proxy.cls_mask)
    images, labels = proxy.images[keep], proxy.labels[keep]
    correct = 0
    with eg.no_grad():
        for start in range(0, len(images), batch_size):
            logits = model.logits(Tensor(images[start:start + batch_size]))
            correct += int((logits.data.argmax(axis=1)
                            == labels[start:start + batch_size]).sum())
    return correct / len(images)
