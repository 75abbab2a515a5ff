import itertools

import numpy as np
import pytest

import slotmorph

SMALL = {
    "data.min_char_count": "0",
    "model.d_model": "16",
    "model.ff_dim": "16",
    "model.num_slots": "4",
    "model.slot_dim": "8",
    "model.max_len": "33",
    "train.batch_size": "8",
    "train.lr": "1e-3",
    "train.seed": "7",
}


def brute_force(cost):
    n = len(cost)
    return min(sum(cost[i][p[i]] for i in range(n)) for p in itertools.permutations(range(n)))


def test_hungarian_matches_brute_force():
    rng = np.random.default_rng(0)
    for k in range(2, 6):
        cost = rng.uniform(-5, 5, size=(k, k)).tolist()
        cols, total = slotmorph.hungarian(cost)
        assert sorted(cols) == list(range(k))
        assert total == pytest.approx(brute_force(cost), abs=1e-12)


def test_bpe_round_trip():
    lines = ["low lower lowest", "new newer newest", "low new"]
    table = slotmorph.train_bpe(lines, 30)
    assert len(table) > 0
    assert "".join(table.tokenize("lowest")) == "lowest"
    assert slotmorph.MergeTable.loads(table.dumps()) == table


def test_gates():
    assert slotmorph.eval_gate(0.0) == 0.5
    assert slotmorph.open_probability(10.0) > 0.99
    assert slotmorph.open_probability(-10.0) < 0.01


def test_config_errors():
    with pytest.raises(slotmorph.ConfigError):
        slotmorph.config_snapshot({"train.lr": "fast"})
    with pytest.raises(slotmorph.ConfigError):
        slotmorph.config_snapshot({"no.such": "1"})
    assert "train.lr = 1e-04" in slotmorph.config_snapshot()


def test_train_save_load(tmp_path):
    lines = slotmorph.toy_corpus(sentences=64, seed=1)["lines"]
    model = slotmorph.Model.create(lines, SMALL)
    metrics = model.train(lines, epochs=2)
    assert [m["epoch"] for m in metrics] == [0, 1]
    assert all(np.isfinite(m["rec_loss"]) for m in metrics)

    path = tmp_path / "model.ckpt"
    model.save(str(path))
    again = slotmorph.Model.load(str(path))
    assert again.epoch == 2
    assert again.evaluate(lines) == model.evaluate(lines)

    slots = model.slots(lines[:5])
    assert slots.shape == (5, 4, 8)

    labels, attn = model.attention(lines[:1])[0]
    assert labels[-1] == "<eos>"
    assert attn.shape == (len(labels), 4)
    np.testing.assert_allclose(attn.sum(axis=1), 1.0, atol=1e-5)
