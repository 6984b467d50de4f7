"""Quick trend probe: the three framework-level arms plus one fusion arm.

Usage: python scripts/probe_trend.py [epochs] [frames_per_video] [seed ...]
"""

import dataclasses
import sys
import tempfile
import time

from sidefuse.fusion import FusionConfig
from sidefuse.harness import RunConfig, run
from sidefuse.synthdata import standard_corpus


def main() -> None:
    epochs = int(sys.argv[1]) if len(sys.argv) > 1 else 30
    frames = int(sys.argv[2]) if len(sys.argv) > 2 else 200
    seeds = tuple(int(s) for s in sys.argv[3:]) or (1,)
    corpus = standard_corpus(seed=7, frames_per_video=frames)
    tmp = tempfile.mkdtemp(prefix="trend_")
    base = RunConfig(seeds=seeds, epochs=epochs,
                     checkpoint_dir=f"{tmp}/ckpt", out_dir=f"{tmp}/runs")
    arms = [
        dataclasses.replace(base, mode="baseline_full"),
        dataclasses.replace(base, mode="frozen_backbone"),
        dataclasses.replace(base, mode="cl_pretrained_frozen"),
        dataclasses.replace(base, mode="sideload",
                            fusion=FusionConfig("se_gating", "backbone")),
        dataclasses.replace(base, mode="sideload",
                            fusion=FusionConfig("addition", "backbone")),
        dataclasses.replace(base, mode="sideload",
                            fusion=FusionConfig("weights_gating", "backbone")),
    ]
    print(f"outputs under {tmp}")
    for cfg in arms:
        t0 = time.time()
        report = run(cfg, corpus=corpus)
        name = report.run_id
        print(f"{name:36s} val {100 * report.val_map50_mean:6.2f} "
              f"+/- {100 * report.val_map50_std:5.2f}   "
              f"test {100 * report.test_map50_mean:6.2f} "
              f"+/- {100 * report.test_map50_std:5.2f}   ({time.time() - t0:.0f}s)",
              flush=True)


if __name__ == "__main__":
    main()
