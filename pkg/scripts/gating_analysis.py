"""Gating-behavior analysis workflow.

Trains per-video self-weighted detectors plus one side-CNN weights-gating
detector, exports every model's tanh(W) gate activations, and emits the four
analysis CSVs: per-layer deviation, cross-model std of min-max-scaled gates
(same-domain pairs vs across-domain), and the per-layer Pearson correlation
between the self-weighted and side-weighted gates.

Usage: python scripts/gating_analysis.py [out_dir] [epochs] [frames_per_video]
"""

from __future__ import annotations

import dataclasses
import sys
from pathlib import Path

from sidefuse.analysis import (
    export_gates,
    pearson,
    write_deviation_csv,
    write_gates_csv,
    write_pearson_csv,
    write_xstd_csv,
)
from sidefuse.fusion import FusionConfig, load_assembly
from sidefuse.harness import RunConfig, run
from sidefuse.synthdata import SplitPlan, make_split, standard_corpus


def train_gated(corpus, base: RunConfig, method: str, train_refs, run_id: str):
    split = make_split(corpus, "video_level")
    plan = SplitPlan("video_level", train_refs, split.val, split.test,
                     val_video=split.val_video)
    cfg = dataclasses.replace(base, mode="sideload",
                              fusion=FusionConfig(method, "blockwise"))
    report = run(cfg, corpus=corpus, split=plan, run_id=run_id)
    return load_assembly(report.seed_results[0].ckpt_path)


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("analysis_out")
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 12
    frames = int(sys.argv[3]) if len(sys.argv) > 3 else 120
    out.mkdir(parents=True, exist_ok=True)
    corpus = standard_corpus(seed=7, frames_per_video=frames)
    base = RunConfig(seeds=(1,), epochs=epochs,
                     checkpoint_dir=str(out / "ckpt"), out_dir=str(out / "runs"))

    # one self-weighted model per annotated video (distinct domains), plus a
    # same-domain split pair of the first train video
    records = {}
    v1_frames = [( "v1", i) for i in range(frames)]
    domain_models = {}
    for vid in ("v1", "v2", "v3"):
        refs = [(vid, i) for i in range(frames)]
        asm = train_gated(corpus, base, "self_weighted", refs, f"selfw_{vid}")
        domain_models[vid] = export_gates(asm)
        write_gates_csv(out / f"gates_selfw_{vid}.csv", domain_models[vid])
    half = frames // 2
    for tag, refs in (("v1a", v1_frames[:half]), ("v1b", v1_frames[half:])):
        asm = train_gated(corpus, base, "self_weighted", refs, f"selfw_{tag}")
        domain_models[tag] = export_gates(asm)
        write_gates_csv(out / f"gates_selfw_{tag}.csv", domain_models[tag])

    # deviation per layer for the all-train self-weighted model
    split = make_split(corpus, "video_level")
    asm_all = train_gated(corpus, base, "self_weighted", split.train, "selfw_all")
    all_records = export_gates(asm_all)
    write_gates_csv(out / "gates.csv", all_records)
    write_deviation_csv(out / "deviation.csv", all_records)

    # cross-model std: same-domain pair vs across-domain triple
    def by_layer(models):
        grouped = {}
        for recs in models:
            for r in recs:
                grouped.setdefault(r.layer_index, []).append(r)
        return grouped

    write_xstd_csv(out / "xstd_same_domain.csv",
                   by_layer([domain_models["v1a"], domain_models["v1b"]]))
    write_xstd_csv(out / "xstd_across_domains.csv",
                   by_layer([domain_models[v] for v in ("v1", "v2", "v3")]))

    # side-CNN weights gating vs self-weighted gates, per layer
    asm_side = train_gated(corpus, base, "weights_gating", split.train, "sidew_all")
    side_records = {r.layer_index: r for r in export_gates(asm_side)}
    self_records = {r.layer_index: r for r in all_records}
    results = {layer: pearson(self_records[layer], side_records[layer])
               for layer in sorted(self_records)}
    write_pearson_csv(out / "pearson.csv", results)

    print(f"analysis artifacts in {out}:")
    for name in ("gates.csv", "deviation.csv", "xstd_same_domain.csv",
                 "xstd_across_domains.csv", "pearson.csv"):
        print(f"  {name}")


if __name__ == "__main__":
    main()
