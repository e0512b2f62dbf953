import logging

import numpy as np
import pytest

from hgcl.config import Hyperparams, RunConfig
from hgcl.objectives import LossConfig
from hgcl.synthetic import generate_synthetic

logging.getLogger("hgcl").setLevel(logging.WARNING)


@pytest.fixture(scope="session")
def small_manifest(tmp_path_factory):
    """Shared 60x160 synthetic dataset for trainer-level tests."""
    root = tmp_path_factory.mktemp("smalldata")
    return str(generate_synthetic(root, 60, 160, 0.8, seed=11))


def small_config(manifest, tmp_path, epochs=6, seed=0, **kw) -> RunConfig:
    hyper = Hyperparams(dim=16, layers=2, rank=3, epochs=epochs, seed=seed,
                        learning_rate=0.01, batch_size=256,
                        alpha_user=kw.pop("alpha_user", 0.8),
                        alpha_item=kw.pop("alpha_item", 0.8))
    return RunConfig(manifest=manifest,
                     checkpoint=str(tmp_path / "model.ckpt"),
                     metrics_csv=str(tmp_path / "metrics.csv"),
                     epochs_jsonl=str(tmp_path / "epochs.jsonl"),
                     hyper=hyper, loss=LossConfig(**kw), patience=0)


@pytest.fixture
def trained_small(small_manifest, tmp_path):
    from hgcl.trainer import train
    cfg = small_config(small_manifest, tmp_path)
    result = train(cfg)
    return cfg, result


def rng_interactions(m, n, density_per_user, seed):
    rng = np.random.default_rng(seed)
    out = set()
    for u in range(m):
        for i in rng.choice(n, size=density_per_user, replace=False):
            out.add((u, int(i)))
    return sorted(out)
