import json
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

SOLVER = shutil.which("schwarzlab")


def run_solver(*args):
    """Invoke the solver CLI (the primary's external interface)."""
    if SOLVER is None:
        pytest.skip("solver CLI not on PATH")
    proc = subprocess.run([SOLVER, *args], capture_output=True, text=True)
    return proc


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """Corpus of ~60 small records with n_c=2 targets."""
    out = tmp_path_factory.mktemp("corpus_small")
    proc = run_solver("corpus",
                      "--set", "corpus.num_graphs=30",
                      "--set", "corpus.graph_size=96",
                      "--set", "corpus.target_size=48",
                      "--set", "corpus.n_c=2",
                      "--set", "corpus.delta=1",
                      "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    return out


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """A handful of very small records for fast checks."""
    out = tmp_path_factory.mktemp("corpus_tiny")
    proc = run_solver("corpus",
                      "--set", "corpus.num_graphs=4",
                      "--set", "corpus.graph_size=64",
                      "--set", "corpus.target_size=32",
                      "--set", "corpus.n_c=2",
                      "--set", "corpus.delta=1",
                      "--out", str(out))
    assert proc.returncode == 0, proc.stderr
    return out


def corpus_paths(corpus_dir):
    manifest = json.loads((Path(corpus_dir) / "manifest.json").read_text())
    return [Path(corpus_dir) / m["path"] for m in manifest["records"]]


@pytest.fixture
def rng():
    return np.random.default_rng(99)
