from __future__ import annotations

import numpy as np
import pytest

from sidefuse.backbone import BackboneSpec
from sidefuse.synthdata import standard_corpus


def assert_close(actual, oracle, tol):
    """|actual - oracle| <= tol * max(1, |oracle|), elementwise."""
    a = np.asarray(actual, dtype=np.float64)
    o = np.asarray(oracle, dtype=np.float64)
    assert a.shape == o.shape, f"shape mismatch {a.shape} vs {o.shape}"
    err = np.abs(a - o) / np.maximum(1.0, np.abs(o))
    assert err.max() <= tol, f"max rel err {err.max():.3e} > {tol:.0e}"


@pytest.fixture(scope="session")
def spec():
    return BackboneSpec()


@pytest.fixture(scope="session")
def mini_corpus():
    # 24 frames per video keeps unit tests quick; structure matches the
    # standard corpus exactly
    return standard_corpus(seed=5, frames_per_video=24)
