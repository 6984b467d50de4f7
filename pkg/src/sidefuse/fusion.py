"""Fusion blocks combining side-CNN features with backbone features.

Four methods at two granularities, plus the self-weighted diagnostic:

- addition:        backbone + side, elementwise
- weights_gating:  backbone + tanh(W) (x)_channel side, W zero-initialized
- se_gating:       backbone + sigmoid(FC2(relu(FC1(pool(side))))) (x) side
- zero_conv:       backbone + conv1x1(side), weight and bias zero-initialized
- self_weighted:   (1 + tanh(W)) * block output, no side extractor, blockwise

weights_gating and zero_conv start as exact identities of the unfused
detector; the gates move away from zero only through training. Blockwise
wiring feeds each fused output into the next backbone block while the side
CNN runs its own unfused forward pass from the raw image.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import engine as eg
from .engine import Parameter, Tensor
from .engine.layers import Conv2dLayer, DenseLayer, load_state, state_dict
from .engine.optim import parameter
from .backbone import Backbone, BackboneSpec, FreezePlan, apply_freeze
from .detect import DetectHead

METHODS = ("none", "addition", "weights_gating", "se_gating", "zero_conv",
           "self_weighted")
GRANULARITIES = ("backbone", "blockwise")
_NEEDS_SIDE = ("addition", "weights_gating", "se_gating", "zero_conv")

_T_BACKBONE = 41
_T_HEAD = 42
_T_SIDE = 43
_T_FUSION = 44


@dataclass(frozen=True)
class FusionConfig:
    method: str = "none"
    granularity: str = "backbone"
    se_reduction: int = 16

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown fusion method '{self.method}'")
        if self.granularity not in GRANULARITIES:
            raise ValueError(f"unknown granularity '{self.granularity}'")
        if self.se_reduction <= 0:
            raise ValueError(f"se_reduction must be positive, got {self.se_reduction}")
        if self.method == "self_weighted" and self.granularity != "blockwise":
            raise ValueError("self_weighted gating is defined per block; "
                             "use granularity='blockwise'")

    def to_json(self) -> dict:
        return {"method": self.method, "granularity": self.granularity,
                "se_reduction": self.se_reduction}

    @staticmethod
    def from_json(d: dict) -> "FusionConfig":
        known = {"method", "granularity", "se_reduction"}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown fusion config keys: {sorted(unknown)}")
        return FusionConfig(**d)


def effective_reduction(channels: int, requested: int) -> int:
    """SE bottleneck ratio per site: honor a valid request, clamp otherwise."""
    if requested <= 0:
        raise ValueError(f"se_reduction must be positive, got {requested}")
    if requested <= channels and channels % requested == 0:
        return requested
    return max(1, channels // 4)


# --- stateless fusion math, usable directly on tensors ----------------------

def fuse_addition(backbone_feat: Tensor, side_feat: Tensor) -> Tensor:
    return eg.add(backbone_feat, side_feat)


def fuse_weights_gating(backbone_feat: Tensor, side_feat: Tensor, w: Tensor) -> Tensor:
    return eg.add(backbone_feat, eg.mul_channelwise(side_feat, eg.tanh(w)))


def fuse_se_gating(backbone_feat: Tensor, side_feat: Tensor,
                   fc1: DenseLayer, fc2: DenseLayer) -> Tensor:
    gates = eg.sigmoid(fc2(eg.relu(fc1(eg.global_avg_pool(side_feat)))))
    return eg.add(backbone_feat, eg.mul_channelwise(side_feat, gates))


def fuse_zero_conv(backbone_feat: Tensor, side_feat: Tensor,
                   conv: Conv2dLayer) -> Tensor:
    return eg.add(backbone_feat, conv(side_feat))


def fuse_self_weighted(block_feat: Tensor, w: Tensor) -> Tensor:
    return eg.add(block_feat, eg.mul_channelwise(block_feat, eg.tanh(w)))


# --- parameter-holding fusion sites -----------------------------------------

class FusionSite:
    """One fusion point; ``layer_index`` is the 1-based block it follows."""

    def __init__(self, method: str, layer_index: int, channels: int):
        self.method = method
        self.layer_index = layer_index
        self.channels = channels
        self.params: list[Parameter] = []

    def __call__(self, backbone_feat: Tensor, side_feat: Tensor | None) -> Tensor:
        raise NotImplementedError


class AdditionSite(FusionSite):
    def __call__(self, backbone_feat, side_feat):
        return fuse_addition(backbone_feat, side_feat)


class WeightsGatingSite(FusionSite):
    def __init__(self, method, layer_index, channels, name):
        super().__init__(method, layer_index, channels)
        self.gate = parameter(f"{name}.gate", np.zeros(channels, dtype=np.float32))
        self.params = [self.gate]

    def __call__(self, backbone_feat, side_feat):
        return fuse_weights_gating(backbone_feat, side_feat, self.gate.tensor)


class SeGatingSite(FusionSite):
    def __init__(self, method, layer_index, channels, name, se_reduction,
                 rng: np.random.Generator):
        super().__init__(method, layer_index, channels)
        r = effective_reduction(channels, se_reduction)
        hidden = channels // r
        self.fc1 = DenseLayer(f"{name}.fc1", channels, hidden, rng)
        self.fc2 = DenseLayer(f"{name}.fc2", hidden, channels, rng)
        self.params = self.fc1.params + self.fc2.params

    def __call__(self, backbone_feat, side_feat):
        return fuse_se_gating(backbone_feat, side_feat, self.fc1, self.fc2)


class ZeroConvSite(FusionSite):
    def __init__(self, method, layer_index, channels, name):
        super().__init__(method, layer_index, channels)
        self.conv = Conv2dLayer(f"{name}.conv", channels, channels, 1, 1, 0,
                                rng=None, zero_init=True)
        self.params = self.conv.params

    def __call__(self, backbone_feat, side_feat):
        return fuse_zero_conv(backbone_feat, side_feat, self.conv)


class SelfWeightedSite(FusionSite):
    def __init__(self, method, layer_index, channels, name):
        super().__init__(method, layer_index, channels)
        self.gate = parameter(f"{name}.gate", np.zeros(channels, dtype=np.float32))
        self.params = [self.gate]

    def __call__(self, backbone_feat, side_feat):
        return fuse_self_weighted(backbone_feat, self.gate.tensor)


def make_site(method: str, layer_index: int, channels: int, se_reduction: int,
              rng: np.random.Generator) -> FusionSite:
    name = f"fusion.site{layer_index}"
    if method == "addition":
        return AdditionSite(method, layer_index, channels)
    if method == "weights_gating":
        return WeightsGatingSite(method, layer_index, channels, name)
    if method == "se_gating":
        return SeGatingSite(method, layer_index, channels, name, se_reduction, rng)
    if method == "zero_conv":
        return ZeroConvSite(method, layer_index, channels, name)
    if method == "self_weighted":
        return SelfWeightedSite(method, layer_index, channels, name)
    raise ValueError(f"no fusion site for method '{method}'")


class ModelAssembly:
    """A full detector: backbone (+ optional side CNN), fusion sites, head."""

    def __init__(self, spec: BackboneSpec, config: FusionConfig, seed: int = 0,
                 model_id: str = "model"):
        self.spec = spec
        self.config = config
        self.seed = seed
        self.model_id = model_id
        self.backbone = Backbone(spec, "backbone", _seeded(seed, _T_BACKBONE))
        self.head = DetectHead("head", spec.block_channels[-1], _seeded(seed, _T_HEAD))
        self.side = (Backbone(spec, "side", _seeded(seed, _T_SIDE))
                     if config.method in _NEEDS_SIDE else None)
        self.sites: list[FusionSite] = []
        if config.method != "none":
            channels = spec.block_channels
            if config.granularity == "backbone":
                idx = len(channels)
                self.sites = [make_site(config.method, idx, channels[-1],
                                        config.se_reduction,
                                        _seeded(seed, _T_FUSION, idx))]
            else:
                self.sites = [make_site(config.method, i + 1, c,
                                        config.se_reduction,
                                        _seeded(seed, _T_FUSION, i + 1))
                              for i, c in enumerate(channels)]

    @property
    def params(self) -> list[Parameter]:
        out = list(self.backbone.params)
        if self.side is not None:
            out += self.side.params
        for s in self.sites:
            out += s.params
        out += self.head.params
        return out

    @property
    def trainable_params(self) -> list[Parameter]:
        return [p for p in self.params if not p.frozen]

    # -- forward variants ---------------------------------------------------

    def forward(self, images: Tensor) -> Tensor:
        cfg = self.config
        if cfg.method == "none":
            return self.head(self.backbone.forward_taps(images)[-1])
        if cfg.method == "self_weighted":
            h = images
            for block, site in zip(self.backbone.blocks, self.sites):
                h = site(block(h), None)
            return self.head(h)
        side_taps = self.side.forward_taps(images)
        if cfg.granularity == "backbone":
            btap = self.backbone.forward_taps(images)[-1]
            return self.head(self.sites[0](btap, side_taps[-1]))
        h = images
        for i, block in enumerate(self.backbone.blocks):
            h = self.sites[i](block(h), side_taps[i])
        return self.head(h)

    def forward_from_final_taps(self, backbone_tap: Tensor,
                                side_tap: Tensor | None) -> Tensor:
        """Head output from precomputed final taps (frozen-feature fast path)."""
        cfg = self.config
        if cfg.method == "none":
            return self.head(backbone_tap)
        if cfg.method != "self_weighted" and cfg.granularity == "backbone":
            return self.head(self.sites[0](backbone_tap, side_tap))
        raise ValueError("final-tap forward only applies to unfused or "
                         "backbone-granularity assemblies")

    def forward_blockwise_from_side_taps(self, images: Tensor,
                                         side_taps: list[Tensor]) -> Tensor:
        """Blockwise forward with the (frozen) side taps already computed."""
        if self.config.granularity != "blockwise" or self.config.method == "none":
            raise ValueError("side-tap forward only applies to blockwise fusion")
        h = images
        for i, block in enumerate(self.backbone.blocks):
            b = block(h)
            h = self.sites[i](b, side_taps[i] if self.side is not None else None)
        return self.head(h)

    # -- state ----------------------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return state_dict(self.params)

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        load_state(self.params, state)

    def meta(self) -> dict:
        return {"model_id": self.model_id, "seed": self.seed,
                "fusion": self.config.to_json(),
                "block_channels": list(self.spec.block_channels)}


def _seeded(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *tags]))


def assemble(backbone_state: dict[str, np.ndarray] | None,
             side_state: dict[str, np.ndarray] | None,
             fusion_config: FusionConfig, freeze_plan: FreezePlan,
             spec: BackboneSpec = BackboneSpec(), seed: int = 0,
             model_id: str = "model") -> ModelAssembly:
    """Build the fine-tuning model from checkpoints, then apply the freeze plan.

    The side checkpoint is required for every fusion method that consumes a
    side extractor; head and fusion parameters keep their seeded init.
    """
    if fusion_config.method in _NEEDS_SIDE and side_state is None:
        raise ValueError(
            f"fusion method '{fusion_config.method}' needs a side checkpoint")
    asm = ModelAssembly(spec, fusion_config, seed=seed, model_id=model_id)
    if backbone_state is not None:
        load_state(asm.backbone.params, backbone_state)
    if asm.side is not None:
        load_state(asm.side.params, side_state)
    plan = freeze_plan
    if asm.side is None and plan.freeze_side:
        plan = FreezePlan(freeze_backbone=plan.freeze_backbone, freeze_side=False)
    apply_freeze(asm.params, plan)
    return asm


def save_assembly(asm: ModelAssembly, path: str | Path) -> None:
    from .engine.checkpoint import save_ntb1
    save_ntb1(path, asm.state_dict())
    Path(str(path) + ".meta.json").write_text(json.dumps(asm.meta(), indent=2,
                                                         sort_keys=True))


def load_assembly(path: str | Path) -> ModelAssembly:
    from .engine.checkpoint import load_ntb1
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    spec = BackboneSpec(block_channels=tuple(meta["block_channels"]))
    asm = ModelAssembly(spec, FusionConfig.from_json(meta["fusion"]),
                        seed=meta["seed"], model_id=meta["model_id"])
    asm.load_state_dict(load_ntb1(path))
    return asm
