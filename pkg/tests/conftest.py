"""Shared fixtures.

One tiny dataset and a throwaway checkpoint pair serve the sampling,
CLI and server tests.  Model quality does not matter for any of them;
plumbing does, so the budget is a few seconds of training.
"""

import json
from types import SimpleNamespace

import pytest

from evtol_sbi import maskedit, mixedit
from evtol_sbi import surrogate_sim as ss
from evtol_sbi.checkpoints import StandardizationStats, save_checkpoint
from evtol_sbi.manifold import precompute_interpolant_table

# doubles as the override block of the run-config JSON the CLI tests use,
# so the in-process checkpoints and the CLI-trained ones agree on shape
TINY_MODELS = {
    "mixedit": {
        "hidden": 16,
        "heads": 2,
        "blocks": 1,
        "epochs": 1,
        "batch_size": 64,
        "sample_steps": 20,
    },
    "maskedit": {"layers": 1, "epochs": 1, "batch_size": 64, "steps": 20},
}


@pytest.fixture(scope="session")
def trained_artifacts(tmp_path_factory):
    root = tmp_path_factory.mktemp("artifacts")
    dset = ss.generate_dataset(n_raw=4000, seed=3)
    stats = StandardizationStats.from_dataset(dset)
    table = precompute_interpolant_table(K=16, n_mc=256, seed=0)

    mix_cfg = mixedit.MixeDiTConfig(**TINY_MODELS["mixedit"])
    mix = mixedit.make_checkpoint(
        mixedit.train(dset, table, mix_cfg, seed=1), mix_cfg, stats
    )
    mask_cfg = maskedit.MaskeDiTConfig.desk(**TINY_MODELS["maskedit"])
    mask = maskedit.make_checkpoint(
        maskedit.train(dset, mask_cfg, seed=2), mask_cfg, stats
    )
    mix.extra["config_hash"] = dset.config_digest
    mask.extra["config_hash"] = dset.config_digest

    data = root / "data.ndjson"
    dset.save(str(data))
    mx, mk = root / "mx.ckpt", root / "mk.ckpt"
    save_checkpoint(str(mx), mix)
    save_checkpoint(str(mk), mask)
    config = root / "config.json"
    config.write_text(
        json.dumps({"profile": "desk", "seed": 3, "n_raw": 4000, **TINY_MODELS})
    )
    return SimpleNamespace(
        dset=dset,
        stats=stats,
        mix=mix,
        mask=mask,
        data=data,
        mx=mx,
        mk=mk,
        config=config,
        root=root,
    )
