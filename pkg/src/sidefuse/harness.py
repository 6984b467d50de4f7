"""Experiment orchestration: run modes, seeded multi-run aggregation,
the fusion-method/granularity matrix, and leave-one-out cross-validation.

Modes mirror the framework-level ablation arms:

- baseline_full:        upstream-initialized, nothing frozen
- cl_pretrained_frozen: backbone loaded from the contrastive checkpoint
                        (projection head discarded), frozen
- frozen_backbone:      upstream-initialized backbone, frozen
- sideload:             frozen upstream backbone + frozen contrastive side
                        CNN, fusion block and head trainable

Every run is deterministic per seed: the seed drives head/fusion init and
batch order; corpora and pretraining checkpoints carry their own seeds.
When the backbone (and side) are frozen, their features are precomputed once
per frame — a pure speedup, unobservable in results.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import engine as eg
from .engine import Tensor
from .engine.checkpoint import load_ntb1, save_ntb1
from .engine.optim import make_optimizer, zero_grad
from .backbone import BackboneSpec, FreezePlan, upstream_pretrain
from .contrastive import pretrain_side, write_pretrain_log
from .detect import EvalMetrics, decode, detection_loss, evaluate
from .fusion import FusionConfig, ModelAssembly, assemble, save_assembly
from .synthdata import Corpus, SplitPlan, load_corpus, make_loo_splits, \
    make_split, proxy_dataset

MODES = ("baseline_full", "cl_pretrained_frozen", "frozen_backbone", "sideload")
PROTOCOLS = ("video_level", "frame_level_80_20", "leave_one_out")

_T_SHUFFLE_FT = 71
_T_AUGMENT_FT = 72


@dataclass(frozen=True)
class RunConfig:
    mode: str = "frozen_backbone"
    fusion: FusionConfig = field(default_factory=FusionConfig)
    protocol: str = "video_level"
    seeds: tuple[int, ...] = (1, 2, 3)
    epochs: int = 30
    batch_size: int = 16
    learning_rate: float = 1e-3
    optimizer: str = "adam"
    augment: bool = True     # flips + color jitter during fine-tuning
    corpus_dir: str = "corpus"
    checkpoint_dir: str = "checkpoints"
    out_dir: str = "runs"
    # stage-1 budgets (shared checkpoints, built on demand)
    pretrain_seed: int = 0
    pretrain_loss: str = "contrastive"
    pretrain_epochs: int = 15
    pretrain_pairs_per_epoch: int = 256
    pretrain_batch_pairs: int = 16
    pretrain_lr: float = 1e-3
    upstream_epochs: int = 16
    upstream_scenes: int = 4500
    upstream_lr: float = 3e-3
    # evaluation operating points
    decode_conf: float = 0.01
    nms_iou: float = 0.5

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"unknown mode '{self.mode}' (expected one of {MODES})")
        if self.protocol not in PROTOCOLS:
            raise ValueError(f"unknown protocol '{self.protocol}'")
        if self.pretrain_loss not in ("contrastive", "ntxent"):
            raise ValueError(f"unknown pretrain_loss '{self.pretrain_loss}'")
        if not self.seeds:
            raise ValueError("need at least one seed")


_CONFIG_KEYS = {f.name for f in dataclasses.fields(RunConfig)}


def config_from_dict(d: dict) -> RunConfig:
    unknown = set(d) - _CONFIG_KEYS
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    kwargs = dict(d)
    if "fusion" in kwargs and isinstance(kwargs["fusion"], dict):
        kwargs["fusion"] = FusionConfig.from_json(kwargs["fusion"])
    if "seeds" in kwargs:
        kwargs["seeds"] = tuple(int(s) for s in kwargs["seeds"])
    return RunConfig(**kwargs)


def config_from_json(path: str | Path) -> RunConfig:
    return config_from_dict(json.loads(Path(path).read_text()))


@dataclass
class SeedResult:
    seed: int
    status: str                      # "ok" or "failed"
    best_epoch: int = -1
    val: EvalMetrics | None = None
    test: EvalMetrics | None = None
    ckpt_path: str = ""
    error: str = ""


@dataclass
class RunReport:
    run_id: str
    mode: str
    fusion: FusionConfig
    protocol: str
    seeds: tuple[int, ...]
    seed_results: list[SeedResult]
    val_map50_mean: float
    val_map50_std: float
    test_map50_mean: float
    test_map50_std: float
    best_ckpt_path: str
    out_dir: str

    @property
    def failed_seeds(self) -> list[int]:
        return [r.seed for r in self.seed_results if r.status != "ok"]


class _FrameStore:
    def __init__(self, corpus: Corpus):
        self._videos = {v.video_id: v for v in corpus.videos}

    def images(self, refs) -> np.ndarray:
        return np.stack([self._videos[vid].frames[i] for vid, i in refs])

    def boxes(self, refs) -> list:
        return [self._videos[vid].annotations[i] for vid, i in refs]


def _remap_side_to_backbone(side_state: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {"backbone." + k[len("side."):]: v for k, v in side_state.items()
            if k.startswith("side.")}


def ensure_checkpoints(config: RunConfig, corpus: Corpus,
                       spec: BackboneSpec = BackboneSpec()) -> tuple[dict, dict | None]:
    """Load or build the upstream and contrastive checkpoints for a corpus."""
    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    upstream_path = ckpt_dir / "upstream.ntb1"
    if upstream_path.exists():
        upstream_state = load_ntb1(upstream_path)
    else:
        proxy = proxy_dataset(config.pretrain_seed, n_scenes=config.upstream_scenes)
        result = upstream_pretrain(spec, proxy, config.upstream_epochs,
                                   config.pretrain_seed,
                                   learning_rate=config.upstream_lr)
        upstream_state = result.state
        save_ntb1(upstream_path, upstream_state)

    side_state = None
    if config.mode in ("sideload", "cl_pretrained_frozen"):
        side_path = ckpt_dir / f"side_{config.pretrain_loss}.ntb1"
        if side_path.exists():
            side_state = load_ntb1(side_path)
        else:
            result = pretrain_side(
                corpus.unannotated_pool, spec, loss_kind=config.pretrain_loss,
                epochs=config.pretrain_epochs, seed=config.pretrain_seed,
                pairs_per_epoch=config.pretrain_pairs_per_epoch,
                batch_pairs=config.pretrain_batch_pairs,
                learning_rate=config.pretrain_lr)
            side_state = result.state
            save_ntb1(side_path, side_state)
            write_pretrain_log(ckpt_dir / f"side_{config.pretrain_loss}_log.csv",
                               result.log_rows)
    return upstream_state, side_state


def build_assembly(config: RunConfig, upstream_state: dict,
                   side_state: dict | None, seed: int, model_id: str,
                   spec: BackboneSpec = BackboneSpec()) -> ModelAssembly:
    none = FusionConfig(method="none")
    if config.mode == "baseline_full":
        return assemble(upstream_state, None, none,
                        FreezePlan(freeze_backbone=False, freeze_side=False),
                        spec=spec, seed=seed, model_id=model_id)
    if config.mode == "frozen_backbone":
        return assemble(upstream_state, None, none,
                        FreezePlan(freeze_backbone=True, freeze_side=False),
                        spec=spec, seed=seed, model_id=model_id)
    if config.mode == "cl_pretrained_frozen":
        if side_state is None:
            raise ValueError("cl_pretrained_frozen needs the contrastive checkpoint")
        return assemble(_remap_side_to_backbone(side_state), None, none,
                        FreezePlan(freeze_backbone=True, freeze_side=False),
                        spec=spec, seed=seed, model_id=model_id)
    if side_state is None and config.fusion.method != "self_weighted":
        raise ValueError(
            "sideload mode needs a contrastive side checkpoint; run the "
            "'pretrain' command or point checkpoint_dir at an existing one")
    return assemble(upstream_state, side_state, config.fusion,
                    FreezePlan(freeze_backbone=True, freeze_side=True),
                    spec=spec, seed=seed, model_id=model_id)


# ---------------------------------------------------------------------------
# fine-tuning with frozen-feature caching
# ---------------------------------------------------------------------------

def _cache_kind(asm: ModelAssembly) -> str:
    backbone_frozen = all(p.frozen for p in asm.backbone.params)
    side_frozen = asm.side is None or all(p.frozen for p in asm.side.params)
    cfg = asm.config
    if cfg.method == "none" and backbone_frozen:
        return "final"
    if (cfg.method != "none" and cfg.method != "self_weighted"
            and cfg.granularity == "backbone" and backbone_frozen and side_frozen):
        return "final"
    if cfg.granularity == "blockwise" and asm.side is not None and side_frozen:
        return "side"
    return "none"


class _FeatureCache:
    """Precomputed frozen features per frame set."""

    def __init__(self, asm: ModelAssembly, images: np.ndarray, kind: str,
                 batch: int = 64):
        self.kind = kind
        self.images = images
        self.b_final: np.ndarray | None = None
        self.s_final: np.ndarray | None = None
        self.side_taps: list[np.ndarray] | None = None
        if kind == "none":
            return
        with eg.no_grad():
            if kind == "final":
                b_parts, s_parts = [], []
                for start in range(0, len(images), batch):
                    chunk = Tensor(images[start:start + batch])
                    b_parts.append(asm.backbone.forward_taps(chunk)[-1].data)
                    if asm.side is not None:
                        s_parts.append(asm.side.forward_taps(chunk)[-1].data)
                self.b_final = np.concatenate(b_parts)
                if s_parts:
                    self.s_final = np.concatenate(s_parts)
            else:  # side taps for blockwise fusion
                parts: list[list[np.ndarray]] = [[] for _ in asm.spec.block_channels]
                for start in range(0, len(images), batch):
                    taps = asm.side.forward_taps(Tensor(images[start:start + batch]))
                    for i, t in enumerate(taps):
                        parts[i].append(t.data)
                self.side_taps = [np.concatenate(p) for p in parts]

    def head_out(self, asm: ModelAssembly, idx: np.ndarray) -> Tensor:
        if self.kind == "final":
            b = Tensor(self.b_final[idx])
            s = Tensor(self.s_final[idx]) if self.s_final is not None else None
            return asm.forward_from_final_taps(b, s)
        if self.kind == "side":
            taps = [Tensor(t[idx]) for t in self.side_taps]
            return asm.forward_blockwise_from_side_taps(Tensor(self.images[idx]), taps)
        return asm.forward(Tensor(self.images[idx]))


def _eval_metrics(asm: ModelAssembly, cache: _FeatureCache, boxes: list,
                  config: RunConfig, batch: int = 128) -> EvalMetrics:
    dets = []
    with eg.no_grad():
        for start in range(0, len(cache.images), batch):
            idx = np.arange(start, min(start + batch, len(cache.images)))
            out = cache.head_out(asm, idx).data
            dets += [decode(out[i], config.decode_conf, config.nms_iou)
                     for i in range(len(idx))]
    return evaluate(dets, boxes)


@dataclass
class _FineTuneOutcome:
    best_epoch: int
    best_val: EvalMetrics
    val_history: list[float]
    batch_rows: list[tuple[int, int, int, str]]


def _augment_batch(images: np.ndarray, boxes: list, rng: np.random.Generator,
                   frame: int = 64) -> tuple[np.ndarray, list]:
    """Box-consistent flips plus brightness/contrast/saturation jitter."""
    from .detect import GtBox

    out = images.copy()
    out_boxes = []
    flips = rng.integers(0, 2, size=(len(images), 2))
    bright = rng.uniform(0.7, 1.3, len(images)).astype(np.float32)
    contrast = rng.uniform(0.7, 1.3, len(images)).astype(np.float32)
    sat = rng.uniform(0.7, 1.3, len(images)).astype(np.float32)
    for i in range(len(images)):
        img, bx = out[i], list(boxes[i])
        if flips[i, 0]:
            img = img[:, :, ::-1]
            bx = [GtBox(frame - b.x2, b.y1, frame - b.x1, b.y2) for b in bx]
        if flips[i, 1]:
            img = img[:, ::-1, :]
            bx = [GtBox(b.x1, frame - b.y2, b.x2, frame - b.y1) for b in bx]
        img = img * bright[i]
        mean = np.float32(img.mean())
        img = mean + contrast[i] * (img - mean)
        gray = img.mean(axis=0, keepdims=True)
        img = gray + sat[i] * (img - gray)
        out[i] = np.clip(img, 0.0, 1.0)
        out_boxes.append(bx)
    return np.ascontiguousarray(out), out_boxes


def fine_tune(asm: ModelAssembly, store: _FrameStore, split: SplitPlan,
              config: RunConfig, seed: int) -> _FineTuneOutcome:
    """Train the non-frozen parameters; keep the best-validation epoch.

    Epoch 0 (the untouched initialization) participates in model selection;
    ties resolve to the earliest epoch. With augmentation on, training runs
    the full forward on jittered images; frozen-feature caching still serves
    the per-epoch evaluations.
    """
    kind = _cache_kind(asm)
    train_images = store.images(split.train)
    train_boxes = store.boxes(split.train)
    val_images = store.images(split.val)
    val_boxes = store.boxes(split.val)
    train_cache = None if config.augment else _FeatureCache(asm, train_images, kind)
    val_cache = _FeatureCache(asm, val_images, kind)

    def snapshot() -> dict[str, np.ndarray]:
        return {p.name: p.tensor.data.copy() for p in asm.trainable_params}

    def restore(state: dict[str, np.ndarray]) -> None:
        for p in asm.trainable_params:
            p.tensor.data[...] = state[p.name]

    opt = make_optimizer(config.optimizer, asm.trainable_params, config.learning_rate)
    shuffle = np.random.default_rng(np.random.SeedSequence([seed, _T_SHUFFLE_FT]))
    aug_rng = np.random.default_rng(np.random.SeedSequence([seed, _T_AUGMENT_FT]))
    val_m = _eval_metrics(asm, val_cache, val_boxes, config)
    best_epoch, best_val, best_state = 0, val_m, snapshot()
    history = [val_m.map50]
    batch_rows: list[tuple[int, int, int, str]] = []
    n = len(split.train)
    for epoch in range(1, config.epochs + 1):
        order = shuffle.permutation(n)
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            if config.augment:
                imgs, boxes = _augment_batch(train_images[idx],
                                             [train_boxes[i] for i in idx], aug_rng)
                head_out = asm.forward(Tensor(imgs))
            else:
                head_out = train_cache.head_out(asm, idx)
                boxes = [train_boxes[i] for i in idx]
            loss = detection_loss(head_out, boxes)
            value = loss.item()
            if not np.isfinite(value):
                raise RuntimeError(
                    f"non-finite fine-tuning loss at epoch {epoch} step {step}")
            zero_grad(asm.trainable_params)
            loss.backward()
            opt.step()
            batch_rows.append((seed, epoch, step, "|".join(
                f"{split.train[i][0]}:{split.train[i][1]}" for i in idx)))
        val_m = _eval_metrics(asm, val_cache, val_boxes, config)
        history.append(val_m.map50)
        if val_m.map50 > best_val.map50:
            best_epoch, best_val, best_state = epoch, val_m, snapshot()
    restore(best_state)
    return _FineTuneOutcome(best_epoch, best_val, history, batch_rows)


# ---------------------------------------------------------------------------
# run / run_matrix / cross_validate
# ---------------------------------------------------------------------------

def default_run_id(config: RunConfig) -> str:
    if config.mode == "sideload":
        return f"sideload_{config.fusion.method}_{config.fusion.granularity}"
    return config.mode


def _pct(x: float) -> str:
    return f"{100.0 * x:.4f}"


def _pop_std(values: list[float]) -> float:
    return float(np.std(np.asarray(values, dtype=np.float64)))


def _fusion_columns(config: RunConfig) -> tuple[str, str]:
    if config.mode == "sideload":
        return config.fusion.method, config.fusion.granularity
    return "none", "-"


def run(config: RunConfig, corpus: Corpus | None = None,
        split: SplitPlan | None = None, run_id: str | None = None) -> RunReport:
    """Pretrain (if checkpoints are missing), fine-tune and evaluate per seed."""
    if config.protocol == "leave_one_out" and split is None:
        raise ValueError("leave_one_out is driven by cross_validate()")
    corpus = corpus if corpus is not None else load_corpus(config.corpus_dir)
    split = split if split is not None else make_split(corpus, config.protocol)
    run_id = run_id or default_run_id(config)
    store = _FrameStore(corpus)
    upstream_state, side_state = ensure_checkpoints(config, corpus)
    out_dir = Path(config.out_dir) / run_id
    out_dir.mkdir(parents=True, exist_ok=True)

    test_boxes = store.boxes(split.test)
    results: list[SeedResult] = []
    all_batch_rows: list[tuple[int, int, int, str]] = []
    for seed in config.seeds:
        asm = build_assembly(config, upstream_state, side_state, seed,
                             model_id=f"{run_id}_s{seed}")
        try:
            outcome = fine_tune(asm, store, split, config, seed)
        except RuntimeError as err:
            results.append(SeedResult(seed, "failed", error=str(err)))
            continue
        test_cache = _FeatureCache(asm, store.images(split.test), _cache_kind(asm))
        test_m = _eval_metrics(asm, test_cache, test_boxes, config)
        ckpt = out_dir / f"seed{seed}_best.ntb1"
        save_assembly(asm, ckpt)
        results.append(SeedResult(seed, "ok", outcome.best_epoch,
                                  outcome.best_val, test_m, str(ckpt)))
        all_batch_rows += outcome.batch_rows

    ok = [r for r in results if r.status == "ok"]
    val_maps = [r.val.map50 for r in ok]
    test_maps = [r.test.map50 for r in ok]
    best_ckpt = ""
    if ok:
        best_ckpt = max(ok, key=lambda r: r.val.map50).ckpt_path
    report = RunReport(
        run_id=run_id, mode=config.mode, fusion=config.fusion,
        protocol=config.protocol, seeds=config.seeds, seed_results=results,
        val_map50_mean=float(np.mean(val_maps)) if ok else 0.0,
        val_map50_std=_pop_std(val_maps) if ok else 0.0,
        test_map50_mean=float(np.mean(test_maps)) if ok else 0.0,
        test_map50_std=_pop_std(test_maps) if ok else 0.0,
        best_ckpt_path=best_ckpt, out_dir=str(out_dir))
    _write_run_outputs(report, config, out_dir, all_batch_rows)
    return report


def _write_run_outputs(report: RunReport, config: RunConfig, out_dir: Path,
                       batch_rows: list[tuple[int, int, int, str]]) -> None:
    fusion, granularity = _fusion_columns(config)
    header = "run_id,mode,fusion,granularity,protocol,seed,split,precision,recall,f_measure,map50"
    lines = [header]
    ok = [r for r in report.seed_results if r.status == "ok"]
    for r in ok:
        for split_name, m in (("val", r.val), ("test", r.test)):
            lines.append(",".join([
                report.run_id, config.mode, fusion, granularity, config.protocol,
                str(r.seed), split_name, _pct(m.precision), _pct(m.recall),
                _pct(m.f_measure), _pct(m.map50)]))
    if ok:
        for split_name, sel in (("val", lambda r: r.val), ("test", lambda r: r.test)):
            ms = [sel(r) for r in ok]
            lines.append(",".join([
                report.run_id, config.mode, fusion, granularity, config.protocol,
                "mean", split_name,
                _pct(float(np.mean([m.precision for m in ms]))),
                _pct(float(np.mean([m.recall for m in ms]))),
                _pct(float(np.mean([m.f_measure for m in ms]))),
                _pct(float(np.mean([m.map50 for m in ms])))]))
    (out_dir / "metrics.csv").write_text("\n".join(lines) + "\n")

    summary_header = ("run_id,mode,fusion,granularity,protocol,split,n_seeds,"
                      "n_failed,map50_mean,map50_std")
    srows = [summary_header]
    for split_name, mean, std in (("val", report.val_map50_mean, report.val_map50_std),
                                  ("test", report.test_map50_mean, report.test_map50_std)):
        srows.append(",".join([
            report.run_id, config.mode, fusion, granularity, config.protocol,
            split_name, str(len(ok)), str(len(report.seed_results) - len(ok)),
            _pct(mean), _pct(std)]))
    (out_dir / "summary.csv").write_text("\n".join(srows) + "\n")

    blines = ["seed,epoch,step,frames"]
    blines += [f"{s},{e},{st},{frames}" for s, e, st, frames in batch_rows]
    (out_dir / "batch_log.csv").write_text("\n".join(blines) + "\n")

    (out_dir / "run_meta.json").write_text(json.dumps({
        "run_id": report.run_id, "mode": config.mode,
        "fusion": config.fusion.to_json(), "protocol": config.protocol,
        "seeds": list(config.seeds), "epochs": config.epochs,
        "batch_size": config.batch_size, "learning_rate": config.learning_rate,
        "optimizer": config.optimizer, "pretrain_seed": config.pretrain_seed,
        "seed_note": "the per-run seed drives both init and batch order",
        "std_convention": "population (divisor N)",
        "best_epochs": {str(r.seed): r.best_epoch for r in ok},
        "failed_seeds": report.failed_seeds,
    }, indent=2, sort_keys=True))


_MATRIX_METHODS = ("addition", "weights_gating", "se_gating", "zero_conv")


def matrix_cells(base: RunConfig) -> list[RunConfig]:
    cells = [dataclasses.replace(base, mode=m)
             for m in ("baseline_full", "cl_pretrained_frozen", "frozen_backbone")]
    for method in _MATRIX_METHODS:
        for granularity in ("backbone", "blockwise"):
            cells.append(dataclasses.replace(
                base, mode="sideload",
                fusion=FusionConfig(method=method, granularity=granularity,
                                    se_reduction=base.fusion.se_reduction)))
    return cells


def run_matrix(base: RunConfig, corpus: Corpus | None = None) -> list[RunReport]:
    """All 11 cells (3 modes + 4 fusion methods x 2 granularities), one CSV."""
    corpus = corpus if corpus is not None else load_corpus(base.corpus_dir)
    split = make_split(corpus, base.protocol)
    reports: list[RunReport] = []
    rows: list[dict] = []
    for cell in matrix_cells(base):
        run_id = default_run_id(cell)
        fusion, granularity = _fusion_columns(cell)
        try:
            report = run(cell, corpus=corpus, split=split, run_id=run_id)
            reports.append(report)
            rows.append({
                "run_id": run_id, "mode": cell.mode, "fusion": fusion,
                "granularity": granularity, "protocol": cell.protocol,
                "status": "ok", "seeds": ";".join(map(str, cell.seeds)),
                "val_map50_mean": _pct(report.val_map50_mean),
                "val_map50_std": _pct(report.val_map50_std),
                "test_map50_mean": _pct(report.test_map50_mean),
                "test_map50_std": _pct(report.test_map50_std),
                "note": ";".join(f"seed{s}_failed" for s in report.failed_seeds),
                "_sort": report.test_map50_mean})
        except Exception as err:  # a failed cell must not sink the matrix
            rows.append({
                "run_id": run_id, "mode": cell.mode, "fusion": fusion,
                "granularity": granularity, "protocol": cell.protocol,
                "status": "failed", "seeds": ";".join(map(str, cell.seeds)),
                "val_map50_mean": "", "val_map50_std": "",
                "test_map50_mean": "", "test_map50_std": "",
                "note": str(err).replace(",", ";"), "_sort": -1.0})
    rows.sort(key=lambda r: (-r["_sort"], r["run_id"]))
    header = ("run_id,mode,fusion,granularity,protocol,status,seeds,"
              "val_map50_mean,val_map50_std,test_map50_mean,test_map50_std,note")
    lines = [header] + [",".join(str(r[k]) for k in header.split(",")) for r in rows]
    out = Path(base.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "comparison.csv").write_text("\n".join(lines) + "\n")
    return reports


def cross_validate(config: RunConfig, corpus: Corpus | None = None) -> list[RunReport]:
    """Leave-one-video-out over the non-test videos; the test video is fixed."""
    corpus = corpus if corpus is not None else load_corpus(config.corpus_dir)
    plans = make_loo_splits(corpus)
    reports = []
    lines = ["val_video,run_id,seeds,val_map50_mean,val_map50_std,"
             "test_map50_mean,test_map50_std,gap_mean"]
    for plan in plans:
        run_id = f"crossval_{default_run_id(config)}_{plan.val_video}"
        report = run(config, corpus=corpus, split=plan, run_id=run_id)
        reports.append(report)
        ok = [r for r in report.seed_results if r.status == "ok"]
        gaps = [abs(r.val.map50 - r.test.map50) for r in ok]
        lines.append(",".join([
            plan.val_video, run_id, ";".join(map(str, config.seeds)),
            _pct(report.val_map50_mean), _pct(report.val_map50_std),
            _pct(report.test_map50_mean), _pct(report.test_map50_std),
            _pct(float(np.mean(gaps)) if gaps else 0.0)]))
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "crossval.csv").write_text("\n".join(lines) + "\n")
    return reports
