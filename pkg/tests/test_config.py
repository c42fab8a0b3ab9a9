from pathlib import Path

import pytest

from tempgnn.config import ModelConfig, preset
from tempgnn.errors import ConfigError

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


@pytest.mark.parametrize("name", ["jodie", "dysat", "tgat", "tgn", "apan"])
def test_presets_round_trip(name):
    cfg = preset(name)
    assert ModelConfig.from_text(cfg.to_text()) == cfg


@pytest.mark.parametrize("path", sorted(CONFIGS.glob("*.ini")), ids=lambda p: p.stem)
def test_shipped_configs_load(path):
    cfg = ModelConfig.load(path)
    assert ModelConfig.from_text(cfg.to_text()) == cfg


def test_shipped_files_match_presets():
    for name in ("jodie", "dysat", "tgat", "tgn", "apan"):
        assert ModelConfig.load(CONFIGS / f"{name}.ini") == preset(name)


def test_skeletons():
    j, d, ta, tg, ap = (preset(n) for n in ("jodie", "dysat", "tgat", "tgn", "apan"))
    assert j.memory.type == "rnn" and j.gnn.layers == 0 and j.memory.time_projection
    assert d.sampling.n_snapshots == 3 and d.gnn.combiner and not d.memory.enabled
    assert ta.gnn.layers == 2 and ta.sampling.strategy == "uniform" and not ta.memory.enabled
    assert tg.memory.type == "gru" and tg.gnn.layers == 1 and tg.sampling.strategy == "most_recent"
    assert ap.memory.type == "apan" and ap.memory.delivery == "hop1_neighbors"
    assert ap.memory.mailbox_size == 10 and tg.memory.mailbox_size == 1
    assert tg.train.batch_size == 600 and tg.gnn.heads == 2 and tg.gnn.dim == 100


def test_memory_none_forbids_mailbox_settings():
    text = "[memory]\ntype = none\nmailbox_size = 4\n[gnn]\nlayers = 1\n"
    with pytest.raises(ConfigError, match="mailbox"):
        ModelConfig.from_text(text)


@pytest.mark.parametrize("text", [
    "[sampling]\nsnapshots = 3\nlayers = 1\n[gnn]\nlayers = 1\ncombiner = false\n",  # combiner required
    "[gnn]\nlayers = 2\n",                                                          # layer mismatch
    "[memory]\ntype = lstm\n",
    "[train]\nbatch_size = 600\nchunk_size = 250\n",
    "[train]\nlr = fast\n",
    "[gnn]\nlayers = 0\n",                                                          # nothing to learn
    "[gnn]\ndim = 10\nheads = 3\n",
    "[model]\nversion = 9\n",
    "[extra]\nx = 1\n",
    "[gnn]\ncolour = blue\n",
    "not an ini file",
])
def test_invalid_configs(text):
    with pytest.raises(ConfigError):
        ModelConfig.from_text(text)


def test_with_train_overrides():
    cfg = preset("tgn").with_train(seed=5, threads=4)
    assert cfg.train.seed == 5 and cfg.train.threads == 4
    with pytest.raises(ConfigError):
        preset("tgn").with_train(chunk_size=7)
    with pytest.raises(ConfigError):
        preset("evolvegcn")
