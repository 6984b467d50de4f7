"""Command-line front-end.

Subcommands: dataset gen, upstream, pretrain, finetune, eval, matrix,
crossval, and analyze gates|deviation|xstd|pearson. Configs are strict JSON
RunConfig files; unknown keys are rejected.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

from .analysis import (
    cross_model_std,
    export_gates,
    pearson,
    read_gates_csv,
    write_deviation_csv,
    write_gates_csv,
    write_pearson_csv,
    write_xstd_csv,
)
from .fusion import load_assembly
from .harness import (
    RunConfig,
    config_from_json,
    cross_validate,
    ensure_checkpoints,
    run,
    run_matrix,
)
from .synthdata import load_corpus, make_split, save_corpus, standard_corpus


def _pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def _cmd_dataset_gen(args) -> int:
    corpus = standard_corpus(args.seed, gap=args.gap, frames_per_video=args.frames)
    save_corpus(corpus, args.out)
    n_ann = len(corpus.annotated_videos)
    print(f"wrote corpus to {args.out}: {n_ann} annotated + "
          f"{len(corpus.videos) - n_ann} unannotated videos "
          f"({args.frames} frames each, gap={args.gap})")
    return 0


def _cmd_upstream(args) -> int:
    config = config_from_json(args.config)
    corpus = load_corpus(config.corpus_dir)
    ensure_checkpoints(dataclasses.replace(config, mode="frozen_backbone"), corpus)
    print(f"upstream checkpoint ready in {config.checkpoint_dir}")
    return 0


def _cmd_pretrain(args) -> int:
    config = config_from_json(args.config)
    corpus = load_corpus(config.corpus_dir)
    ensure_checkpoints(dataclasses.replace(config, mode="sideload"), corpus)
    print(f"side checkpoint (loss={config.pretrain_loss}) ready in "
          f"{config.checkpoint_dir}")
    return 0


def _cmd_finetune(args) -> int:
    config = config_from_json(args.config)
    report = run(config)
    print(f"run {report.run_id}: val mAP@50 {_pct(report.val_map50_mean)}"
          f" +/- {_pct(report.val_map50_std)}, test mAP@50 "
          f"{_pct(report.test_map50_mean)} +/- {_pct(report.test_map50_std)}")
    if report.failed_seeds:
        print(f"  failed seeds: {report.failed_seeds}", file=sys.stderr)
    print(f"  outputs in {report.out_dir}")
    return 0


def _cmd_eval(args) -> int:
    from .detect import decode, evaluate
    from .harness import _FeatureCache, _cache_kind, _FrameStore

    asm = load_assembly(args.model)
    corpus = load_corpus(args.corpus)
    split = make_split(corpus, args.protocol)
    refs = {"train": split.train, "val": split.val, "test": split.test}[args.split]
    store = _FrameStore(corpus)
    cache = _FeatureCache(asm, store.images(refs), _cache_kind(asm))
    import numpy as np

    dets = []
    from . import engine as eg
    with eg.no_grad():
        for start in range(0, len(refs), 128):
            idx = np.arange(start, min(start + 128, len(refs)))
            out = cache.head_out(asm, idx).data
            dets += [decode(out[i], args.conf, args.nms) for i in range(len(idx))]
    metrics = evaluate(dets, store.boxes(refs))
    print(f"{args.split}: precision {_pct(metrics.precision)} recall "
          f"{_pct(metrics.recall)} f-measure {_pct(metrics.f_measure)} "
          f"mAP@50 {_pct(metrics.map50)}"
          + (" (undefined: no boxes)" if metrics.undefined else ""))
    return 0


def _cmd_matrix(args) -> int:
    config = config_from_json(args.config)
    run_matrix(config)
    print(f"comparison table written to {Path(config.out_dir) / 'comparison.csv'}")
    return 0


def _cmd_crossval(args) -> int:
    config = config_from_json(args.config)
    cross_validate(config)
    print(f"cross-validation table written to {Path(config.out_dir) / 'crossval.csv'}")
    return 0


def _cmd_analyze(args) -> int:
    out = Path(args.out) if args.out else None
    if args.what == "gates":
        records = export_gates(load_assembly(args.inputs[0]))
        path = out or Path("gates.csv")
        write_gates_csv(path, records)
    elif args.what == "deviation":
        records = read_gates_csv(args.inputs[0])
        path = out or Path("deviation.csv")
        write_deviation_csv(path, records)
    elif args.what == "xstd":
        if len(args.inputs) < 2:
            print("xstd needs at least two gates.csv files", file=sys.stderr)
            return 2
        per_layer: dict[int, list] = {}
        for p in args.inputs:
            for rec in read_gates_csv(p):
                per_layer.setdefault(rec.layer_index, []).append(rec)
        path = out or Path("xstd.csv")
        write_xstd_csv(path, per_layer)
        for layer in sorted(per_layer):
            _, summary = cross_model_std(per_layer[layer])
            print(f"layer {layer}: mean per-channel std {summary:.4f}")
    else:  # pearson
        if len(args.inputs) != 2:
            print("pearson needs exactly two gates.csv files", file=sys.stderr)
            return 2
        rec_a = {r.layer_index: r for r in read_gates_csv(args.inputs[0])}
        rec_b = {r.layer_index: r for r in read_gates_csv(args.inputs[1])}
        results = {layer: pearson(rec_a[layer], rec_b[layer])
                   for layer in sorted(set(rec_a) & set(rec_b))}
        path = out or Path("pearson.csv")
        write_pearson_csv(path, results)
        for layer, res in results.items():
            tag = f"r={res.r:.4f}" if res.defined else "undefined (constant gates)"
            print(f"layer {layer}: {tag}")
    print(f"wrote {path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sidefuse",
        description="Side-CNN contrastive pretraining and gated fusion toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p_dataset = sub.add_parser("dataset", help="synthetic corpus tools")
    dsub = p_dataset.add_subparsers(dest="dataset_command", required=True)
    p_gen = dsub.add_parser("gen", help="generate the standard corpus")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--out", required=True)
    p_gen.add_argument("--gap", choices=("default", "wide"), default="default")
    p_gen.add_argument("--frames", type=int, default=200)
    p_gen.set_defaults(func=_cmd_dataset_gen)

    for name, func, help_text in (
            ("upstream", _cmd_upstream, "build the upstream proxy checkpoint"),
            ("pretrain", _cmd_pretrain, "contrastively pretrain the side CNN"),
            ("finetune", _cmd_finetune, "fine-tune and evaluate one run config"),
            ("matrix", _cmd_matrix, "run the full mode x fusion x granularity matrix"),
            ("crossval", _cmd_crossval, "leave-one-video-out cross-validation")):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True)
        p.set_defaults(func=func)

    p_eval = sub.add_parser("eval", help="evaluate a saved model on a split")
    p_eval.add_argument("--model", required=True, help="NTB1 checkpoint path")
    p_eval.add_argument("--split", required=True, choices=("train", "val", "test"))
    p_eval.add_argument("--corpus", required=True)
    p_eval.add_argument("--protocol", default="video_level",
                        choices=("video_level", "frame_level_80_20"))
    p_eval.add_argument("--conf", type=float, default=0.01)
    p_eval.add_argument("--nms", type=float, default=0.5)
    p_eval.set_defaults(func=_cmd_eval)

    p_an = sub.add_parser("analyze", help="gating-analysis instruments")
    p_an.add_argument("what", choices=("gates", "deviation", "xstd", "pearson"))
    p_an.add_argument("--in", dest="inputs", nargs="+", required=True)
    p_an.add_argument("--out", default=None)
    p_an.set_defaults(func=_cmd_analyze)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
