import json

import numpy as np
import pytest
import torch

from coarsenet.formats import read_cbx
from coarsenet.infer import infer_to_cbx
from coarsenet.model import CoarseBasisNet, ModelConfig
from coarsenet.train import (evaluate, load_checkpoint,
                             load_manifest_samples, train)

SMALL = dict(d0=16, K=6, n_head=4, d_head=4, depth=1, n_c=2, lr=1e-2)


def test_epoch_zero_deterministic(tiny_corpus, tmp_path):
    losses = []
    for run in range(2):
        cfg = ModelConfig(epochs=1, seed=7, **SMALL)
        samples = load_manifest_samples(tiny_corpus, cfg)
        _, report = train(samples, cfg, tmp_path / f"run{run}",
                          log=lambda s: None)
        losses.append(report.epochs[0]["train_loss"])
    assert losses[0] == losses[1]


def test_checkpoint_round_trip(tiny_corpus, tmp_path):
    cfg = ModelConfig(epochs=2, seed=1, **SMALL)
    samples = load_manifest_samples(tiny_corpus, cfg)
    model, report = train(samples, cfg, tmp_path, log=lambda s: None)
    loaded, cfg_back = load_checkpoint(tmp_path / "checkpoint.pt")
    assert cfg_back.to_dict() == cfg.to_dict()
    val = [s for s in samples if s.split == "val"] or samples
    a = evaluate(loaded, val, cfg)
    assert np.isfinite(a)
    assert (tmp_path / "train_report.json").exists()
    payload = json.loads((tmp_path / "train_report.json").read_text())
    assert len(payload["epochs"]) == 2


def test_infer_writes_loadable_bases(tiny_corpus, tmp_path):
    cfg = ModelConfig(epochs=1, seed=2, **SMALL)
    samples = load_manifest_samples(tiny_corpus, cfg)
    train(samples, cfg, tmp_path / "ck", log=lambda s: None)
    out = tmp_path / "pred"
    written = infer_to_cbx(tmp_path / "ck" / "checkpoint.pt",
                           tiny_corpus, out)
    assert len(written) == len(list(tiny_corpus.glob("*.sgb")))
    for name in written:
        Z = read_cbx(out / name)
        assert Z.shape[1] == cfg.n_c
        assert np.isfinite(Z).all()


def test_infer_empty_dir(tmp_path):
    cfg = ModelConfig(epochs=0, seed=0, **SMALL)
    torch.manual_seed(0)
    model = CoarseBasisNet(cfg).double()
    torch.save({"config": cfg.to_dict(), "state": model.state_dict()},
               tmp_path / "c.pt")
    (tmp_path / "empty").mkdir()
    written = infer_to_cbx(tmp_path / "c.pt", tmp_path / "empty",
                           tmp_path / "out")
    assert written == []
