"""Stage-1 pretraining of the side extractor on unannotated frames.

Pairs are defined on whole frames: two independent augmentations of one
frame form a similar pair (label 0); augmentations of frames from two
different videos form a dissimilar pair (label 1). Same-video dissimilar
pairs are forbidden. The margin loss follows the classic Siamese form; the
NT-Xent alternative normalizes embeddings and contrasts each view against
its partner over in-batch negatives.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import engine as eg
from .engine import Tensor
from .engine.layers import DenseLayer, state_dict
from .engine.optim import Parameter, make_optimizer, zero_grad
from .backbone import Backbone, BackboneSpec
from .imageops import gaussian_blur, resize_bilinear, rotate_bilinear
from .synthdata import SynthVideo

_T_INIT = 31
_T_PAIRS = 32
_T_VIEW = 33


@dataclass(frozen=True)
class AugmentationParams:
    crop_scale: tuple[float, float] = (0.6, 1.0)
    hflip_prob: float = 0.5
    rotation_deg: float = 15.0
    jitter: float = 0.4
    blur_sigma: tuple[float, float] = (0.1, 1.5)
    blur_prob: float = 0.5


def augment(frame: np.ndarray, rng: np.random.Generator,
            params: AugmentationParams = AugmentationParams()) -> np.ndarray:
    """Random crop+resize, flip, rotation, color jitter, blur; output in [0,1]."""
    _, h, w = frame.shape
    side = max(8, int(round(h * rng.uniform(*params.crop_scale))))
    top = int(rng.integers(0, h - side + 1))
    left = int(rng.integers(0, w - side + 1))
    img = resize_bilinear(frame[:, top:top + side, left:left + side], h, w)
    if rng.random() < params.hflip_prob:
        img = img[:, :, ::-1].copy()
    img = rotate_bilinear(img, float(rng.uniform(-params.rotation_deg,
                                                 params.rotation_deg)))
    j = params.jitter
    img = img * np.float32(rng.uniform(1 - j, 1 + j))                  # brightness
    mean = np.float32(img.mean())
    img = mean + np.float32(rng.uniform(1 - j, 1 + j)) * (img - mean)  # contrast
    gray = img.mean(axis=0, keepdims=True)
    img = gray + np.float32(rng.uniform(1 - j, 1 + j)) * (img - gray)  # saturation
    if rng.random() < params.blur_prob:
        img = gaussian_blur(img, float(rng.uniform(*params.blur_sigma)))
    return np.clip(img, 0.0, 1.0).astype(np.float32)


@dataclass
class PairBatch:
    views_a: np.ndarray                  # (N, 3, 64, 64)
    views_b: np.ndarray
    labels: np.ndarray                   # (N,) 0 = similar, 1 = dissimilar
    sources_a: list[tuple[str, int]]     # (video_id, frame index) provenance
    sources_b: list[tuple[str, int]]


def _view_rng(seed: int, pair_idx: int, view: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, _T_VIEW, pair_idx, view]))


def make_pairs(pool: list[SynthVideo], n_pairs: int, balance: bool = True,
               seed: int = 0,
               aug: AugmentationParams = AugmentationParams()) -> PairBatch:
    """Sample a contrastive minibatch of N pairs (2N data points) from a pool."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    if balance and n_pairs % 2:
        raise ValueError(f"balanced batches need an even n_pairs, got {n_pairs}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _T_PAIRS]))
    if balance:
        labels = np.array([0] * (n_pairs // 2) + [1] * (n_pairs - n_pairs // 2))
        labels = labels[rng.permutation(n_pairs)]
    else:
        labels = rng.integers(0, 2, size=n_pairs)
    if labels.sum() > 0 and len(pool) < 2:
        raise ValueError("dissimilar pairs need at least 2 videos in the pool")

    shape = pool[0].frames.shape[1:]
    views_a = np.empty((n_pairs,) + shape, dtype=np.float32)
    views_b = np.empty_like(views_a)
    sources_a: list[tuple[str, int]] = []
    sources_b: list[tuple[str, int]] = []
    for i, y in enumerate(labels):
        if y == 0:
            v = pool[int(rng.integers(0, len(pool)))]
            f = int(rng.integers(0, len(v.frames)))
            frame = v.frames[f]
            views_a[i] = augment(frame, _view_rng(seed, i, 0), aug)
            views_b[i] = augment(frame, _view_rng(seed, i, 1), aug)
            sources_a.append((v.video_id, f))
            sources_b.append((v.video_id, f))
        else:
            ia, ib = rng.choice(len(pool), size=2, replace=False)
            va, vb = pool[int(ia)], pool[int(ib)]
            fa = int(rng.integers(0, len(va.frames)))
            fb = int(rng.integers(0, len(vb.frames)))
            views_a[i] = augment(va.frames[fa], _view_rng(seed, i, 0), aug)
            views_b[i] = augment(vb.frames[fb], _view_rng(seed, i, 1), aug)
            sources_a.append((va.video_id, fa))
            sources_b.append((vb.video_id, fb))
    return PairBatch(views_a, views_b, labels.astype(np.int8), sources_a, sources_b)


def contrastive_loss(emb_a: Tensor, emb_b: Tensor, labels: np.ndarray,
                     margin: float = 1.0) -> Tensor:
    """Margin contrastive loss: mean of (1-y) d^2 + y max(0, margin - d)^2."""
    if margin <= 0:
        raise ValueError(f"margin must be > 0, got {margin}")
    if emb_a.data.ndim != 2 or emb_a.data.shape != emb_b.data.shape:
        raise ValueError(
            f"embeddings must be matching (N,D), got {emb_a.shape} and {emb_b.shape}")
    n = emb_a.data.shape[0]
    if n == 0:
        raise ValueError("empty batch")
    y = np.asarray(labels, dtype=np.float32)
    if y.shape != (n,):
        raise ValueError(f"labels must be ({n},), got {y.shape}")
    diff = emb_a - emb_b
    d2 = eg.mul(diff, diff).sum(axis=1)
    d = eg.sqrt(d2)
    hinge = eg.relu(Tensor(np.full(n, margin, dtype=np.float32)) - d)
    per_pair = eg.mul(Tensor(1.0 - y), d2) + eg.mul(Tensor(y), eg.mul(hinge, hinge))
    return per_pair.mean()


def ntxent_loss(embeddings: Tensor, temperature: float = 0.5) -> Tensor:
    """NT-Xent over rows (2k, 2k+1) as positive pairs of a (2N, D) tensor."""
    if temperature <= 0:
        raise ValueError(f"temperature must be > 0, got {temperature}")
    if embeddings.data.ndim != 2 or embeddings.data.shape[0] % 2:
        raise ValueError(f"embeddings must be (2N, D), got {embeddings.shape}")
    two_n = embeddings.data.shape[0]
    if two_n < 4:
        raise ValueError("NT-Xent needs at least 2 pairs (no negatives otherwise)")
    z = eg.normalize_rows(embeddings)
    sim = eg.scale(eg.matmul(z, eg.transpose(z)), 1.0 / temperature)
    diag = Tensor(np.float32(-1e9) * np.eye(two_n, dtype=np.float32))
    lse = eg.logsumexp_rows(sim + diag)
    pos_mask = np.zeros((two_n, two_n), dtype=np.float32)
    idx = np.arange(two_n)
    pos_mask[idx, idx ^ 1] = 1.0
    pos = eg.mul(sim, Tensor(pos_mask)).sum(axis=1)
    return (lse - pos).mean()


class ProjectionHead:
    """Pooled backbone features (64) -> dense 64 relu -> dense 32."""

    OUT_DIM = 32

    def __init__(self, rng: np.random.Generator, d_in: int = 64):
        self.fc1 = DenseLayer("proj.fc1", d_in, 64, rng)
        self.fc2 = DenseLayer("proj.fc2", 64, self.OUT_DIM, rng)

    def __call__(self, pooled: Tensor) -> Tensor:
        return self.fc2(eg.relu(self.fc1(pooled)))

    @property
    def params(self) -> list[Parameter]:
        return self.fc1.params + self.fc2.params


@dataclass
class SidePretrainResult:
    state: dict[str, np.ndarray]     # side extractor only; projection head dropped
    log_rows: list[dict]
    epoch_losses: list[float]


def _embed(side: Backbone, proj: ProjectionHead, images: np.ndarray) -> Tensor:
    taps = side.forward_taps(Tensor(images))
    return proj(eg.global_avg_pool(taps[-1]))


def pretrain_side(pool: list[SynthVideo], spec: BackboneSpec,
                  loss_kind: str = "contrastive", epochs: int = 20, seed: int = 0,
                  pairs_per_epoch: int = 256, batch_pairs: int = 16,
                  learning_rate: float = 1e-3, margin: float = 1.0,
                  temperature: float = 0.5,
                  aug: AugmentationParams = AugmentationParams()) -> SidePretrainResult:
    """Contrastive pretraining of the side extractor; the MLP head is dropped."""
    if loss_kind not in ("contrastive", "ntxent"):
        raise ValueError(f"unknown loss_kind '{loss_kind}'")
    if not pool:
        raise ValueError("empty unannotated pool")
    rng = np.random.default_rng(np.random.SeedSequence([seed, _T_INIT]))
    side = Backbone(spec, "side", rng)
    proj = ProjectionHead(rng, spec.block_channels[-1])
    params = side.params + proj.params
    log_rows: list[dict] = []
    epoch_losses: list[float] = []
    if epochs > 0:
        opt = make_optimizer("adam", params, learning_rate)
        steps = max(1, pairs_per_epoch // batch_pairs)
        for epoch in range(1, epochs + 1):
            batch_losses = []
            for step in range(steps):
                batch_seed = seed * 1_000_003 + epoch * 1_009 + step
                if loss_kind == "contrastive":
                    batch = make_pairs(pool, batch_pairs, balance=True,
                                       seed=batch_seed, aug=aug)
                    loss = contrastive_loss(
                        _embed(side, proj, batch.views_a),
                        _embed(side, proj, batch.views_b),
                        batch.labels, margin=margin)
                else:
                    batch = _similar_pairs(pool, batch_pairs, batch_seed, aug)
                    stacked = np.empty((2 * batch_pairs,) + batch.views_a.shape[1:],
                                       dtype=np.float32)
                    stacked[0::2] = batch.views_a
                    stacked[1::2] = batch.views_b
                    loss = ntxent_loss(_embed(side, proj, stacked), temperature)
                value = loss.item()
                if not np.isfinite(value):
                    raise RuntimeError(
                        f"side pretraining diverged: non-finite loss at "
                        f"epoch {epoch} step {step}")
                zero_grad(params)
                loss.backward()
                opt.step()
                batch_losses.append(value)
                log_rows.append({"epoch": epoch, "step": step, "loss": value,
                                 "loss_kind": loss_kind, "seed": seed})
            epoch_losses.append(float(np.mean(batch_losses)))
    return SidePretrainResult(state_dict(side.params), log_rows, epoch_losses)


def _similar_pairs(pool: list[SynthVideo], n_pairs: int, seed: int,
                   aug: AugmentationParams) -> PairBatch:
    """All-positive batch for NT-Xent: two views per sampled frame."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, _T_PAIRS, 1]))
    shape = pool[0].frames.shape[1:]
    views_a = np.empty((n_pairs,) + shape, dtype=np.float32)
    views_b = np.empty_like(views_a)
    sources = []
    for i in range(n_pairs):
        v = pool[int(rng.integers(0, len(pool)))]
        f = int(rng.integers(0, len(v.frames)))
        views_a[i] = augment(v.frames[f], _view_rng(seed, i, 0), aug)
        views_b[i] = augment(v.frames[f], _view_rng(seed, i, 1), aug)
        sources.append((v.video_id, f))
    return PairBatch(views_a, views_b, np.zeros(n_pairs, dtype=np.int8),
                     sources, list(sources))


def write_pretrain_log(path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "step", "loss", "loss_kind", "seed"])
        for r in rows:
            w.writerow([r["epoch"], r["step"], f"{r['loss']:.6f}",
                        r["loss_kind"], r["seed"]])
