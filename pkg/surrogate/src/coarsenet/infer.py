"""Inference: predicted coarse bases written as CBX1 for the solver."""

from __future__ import annotations

from pathlib import Path

import torch

from .formats import read_sgb, write_cbx
from .model import prepare_inputs
from .train import load_checkpoint


def infer_to_cbx(checkpoint_path, sgb_dir, out_dir):
    """One CBX1 per .sgb record; basis_%04d naming follows the solver's
    import convention when record names carry subdomain_%04d."""
    model, config = load_checkpoint(checkpoint_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for path in sorted(Path(sgb_dir).glob("*.sgb")):
        rec = read_sgb(path)
        with torch.no_grad():
            X = model(prepare_inputs(rec, config)).numpy()
        name = path.stem.replace("subdomain_", "basis_") + ".cbx"
        write_cbx(out / name, X)
        written.append(name)
    return written
