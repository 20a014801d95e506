import json

import numpy as np
import pytest

from salbci.ingest import FEATURE_HEADER


def _features_csv(path, n=5, au=0.0, seed=0):
    rng = np.random.default_rng(seed)
    rows = [",".join(FEATURE_HEADER)]
    for i in range(n):
        vals = [i / 5.0] + [au] * 12 + list(rng.normal(size=5)) + list(rng.normal(size=3)) + [abs(rng.normal())]
        rows.append(",".join(repr(float(v)) for v in vals))
    path.write_text("\n".join(rows) + "\n")


@pytest.fixture
def write_features():
    return _features_csv


@pytest.fixture
def tiny_dataset(tmp_path):
    """Four videos (one per outcome) with 20 ratings everywhere and features."""
    videos = []
    (tmp_path / "ann").mkdir()
    (tmp_path / "feat").mkdir()
    for i, outcome in enumerate(("CC", "CD", "DC", "DD")):
        vid = f"v{i}"
        ann = {
            "context_free": {"valence": [4] * 10 + [5] * 10, "basic_emotion": ["joy"] * 15 + ["neutral"] * 5},
            "context_only": {"valence": [3] * 20, "basic_emotion": ["joy"] * 10 + ["sadness"] * 10},
            "context_based": {"valence": [4] * 20, "basic_emotion": ["joy"] * 20},
        }
        (tmp_path / "ann" / f"{vid}.json").write_text(json.dumps(ann))
        _features_csv(tmp_path / "feat" / f"{vid}.csv", au=0.5 * i, seed=i)
        videos.append({"id": vid, "outcome": outcome, "annotations": f"ann/{vid}.json", "features": f"feat/{vid}.csv"})
    manifest = tmp_path / "manifest.json"
    manifest.write_text(json.dumps({"videos": videos}))
    return manifest
