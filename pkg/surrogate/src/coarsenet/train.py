"""Training loop: supervised subspace-distance minimization over records."""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .formats import read_sgb
from .loss import LossWeights, subspace_loss
from .model import CoarseBasisNet, ModelConfig, prepare_inputs


@dataclass
class Sample:
    name: str
    split: str
    inputs: dict
    weights: LossWeights


def load_manifest_samples(corpus_dir, config):
    """Samples from a corpus manifest; records without targets are skipped."""
    corpus_dir = Path(corpus_dir)
    manifest = json.loads((corpus_dir / "manifest.json").read_text())
    samples = []
    for meta in manifest["records"]:
        rec = read_sgb(corpus_dir / meta["path"])
        if rec.target is None:
            continue
        samples.append(Sample(name=meta["path"], split=meta["split"],
                              inputs=prepare_inputs(rec, config),
                              weights=LossWeights(rec)))
    return samples


def load_dir_samples(sgb_dir, config, split="train"):
    """Samples from a flat directory of .sgb files (all one split)."""
    samples = []
    for path in sorted(Path(sgb_dir).glob("*.sgb")):
        rec = read_sgb(path)
        if rec.target is None:
            continue
        samples.append(Sample(name=path.name, split=split,
                              inputs=prepare_inputs(rec, config),
                              weights=LossWeights(rec)))
    return samples


@dataclass
class TrainReport:
    epochs: list = field(default_factory=list)
    wall_seconds: float = 0.0
    initial_val: float = math.inf  # validation loss at initialization
    best_val: float = math.inf
    best_epoch: int = -1

    def to_json(self, path):
        payload = {"epochs": self.epochs, "wall_seconds": self.wall_seconds,
                   "initial_val": self.initial_val,
                   "best_val": self.best_val, "best_epoch": self.best_epoch}
        with open(path, "w") as fh:
            json.dump(payload, fh, indent=2)
            fh.write("\n")


class NanLossError(RuntimeError):
    def __init__(self, epoch, record):
        super().__init__(f"NaN loss at epoch {epoch} on record {record}")
        self.epoch = epoch
        self.record = record


def evaluate(model, samples, config):
    model.eval()
    losses = []
    with torch.no_grad():
        for s in samples:
            X = model(s.inputs)
            losses.append(float(subspace_loss(
                X, s.weights, squared=config.dist_squared)))
    return float(np.mean(losses)) if losses else math.nan


def train(samples, config, out_dir, log=print, early_stop_ratio=None,
          batch_size=1):
    """Adam with cosine decay; gradients accumulate over ``batch_size``
    graphs per step.

    Saves the best-validation checkpoint and a per-epoch report; aborts
    with the failing epoch/record on a NaN loss.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    torch.manual_seed(config.seed)
    model = CoarseBasisNet(config).double()
    opt = torch.optim.Adam(model.parameters(), lr=config.lr)
    sched = torch.optim.lr_scheduler.CosineAnnealingLR(
        opt, T_max=max(config.epochs, 1))
    train_s = [s for s in samples if s.split == "train"]
    val_s = [s for s in samples if s.split == "val"]
    if not train_s:
        raise ValueError("no training records with targets")
    order_rng = np.random.default_rng(config.seed)

    report = TrainReport()
    t0 = time.monotonic()
    report.initial_val = evaluate(model, val_s or train_s, config)
    val0 = None
    for epoch in range(config.epochs):
        model.train()
        perm = order_rng.permutation(len(train_s))
        total = 0.0
        opt.zero_grad()
        pending = 0
        for j in perm.tolist():
            s = train_s[j]
            loss = subspace_loss(model(s.inputs), s.weights,
                                 squared=config.dist_squared)
            if not torch.isfinite(loss):
                raise NanLossError(epoch, s.name)
            (loss / batch_size).backward()
            pending += 1
            if pending == batch_size:
                opt.step()
                opt.zero_grad()
                pending = 0
            total += float(loss.detach())
        if pending:
            opt.step()
            opt.zero_grad()
        sched.step()
        train_loss = total / len(train_s)
        val_loss = evaluate(model, val_s or train_s, config)
        report.epochs.append({"epoch": epoch, "train_loss": train_loss,
                              "val_loss": val_loss,
                              "lr": sched.get_last_lr()[0]})
        if val0 is None:
            val0 = val_loss
        if val_loss < report.best_val:
            report.best_val = val_loss
            report.best_epoch = epoch
            torch.save({"config": config.to_dict(),
                        "state": model.state_dict()},
                       out / "checkpoint.pt")
        log(f"epoch {epoch}: train {train_loss:.4f} val {val_loss:.4f}")
        if early_stop_ratio is not None and val_loss <= early_stop_ratio * val0:
            break
    report.wall_seconds = time.monotonic() - t0
    report.to_json(out / "train_report.json")
    return model, report


def load_checkpoint(path):
    blob = torch.load(path, weights_only=False)
    config = ModelConfig(**blob["config"])
    model = CoarseBasisNet(config).double()
    model.load_state_dict(blob["state"])
    model.eval()
    return model, config
