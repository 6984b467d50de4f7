"""Run the full mode x fusion-method x granularity comparison matrix.

Usage: python scripts/run_matrix.py [out_dir] [epochs] [frames] [seed ...]
"""

import sys
from pathlib import Path

from sidefuse.harness import RunConfig, run_matrix
from sidefuse.synthdata import standard_corpus


def main() -> None:
    out = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("matrix_out")
    epochs = int(sys.argv[2]) if len(sys.argv) > 2 else 30
    frames = int(sys.argv[3]) if len(sys.argv) > 3 else 200
    seeds = tuple(int(s) for s in sys.argv[4:]) or (1, 2, 3)
    corpus = standard_corpus(seed=7, frames_per_video=frames)
    cfg = RunConfig(seeds=seeds, epochs=epochs,
                    checkpoint_dir=str(out / "ckpt"), out_dir=str(out))
    run_matrix(cfg, corpus=corpus)
    print((out / "comparison.csv").read_text())


if __name__ == "__main__":
    main()
