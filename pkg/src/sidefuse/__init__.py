"""sidefuse: contrastive side-CNN pretraining fused into a frozen detector.

Two-stage workflow on a synthetic snowy-video corpus: (1) pretrain a side
feature extractor on unannotated videos with a margin or NT-Xent contrastive
loss; (2) fuse its features into a frozen upstream-pretrained backbone
through one of four gating mechanisms, at backbone level or blockwise, and
fine-tune the detection head. Includes the gating-analysis instruments and
a deterministic experiment harness.
"""

from . import analysis, backbone, contrastive, detect, engine, fusion, harness, synthdata

__version__ = "0.1.0"

__all__ = ["analysis", "backbone", "contrastive", "detect", "engine", "fusion",
           "harness", "synthdata", "__version__"]
