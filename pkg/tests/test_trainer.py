import json

import numpy as np
import pytest

from dcsr.corpus import parse_example
from dcsr.encoder import (BM25_NEGATIVE, IN_BATCH_GOLD, LossBatch, batch_loss, init_params,
                          load_params, loss_gradient)
from dcsr.errors import EmptyPool, NumericalError
from dcsr.sampler import SamplingStrategy, build_batch, make_rng
from dcsr.synth import SynthSpec, generate
from dcsr.trainer import (TrainConfig, concat_datasets, sgd_step, train, validation_accuracy,
                          validation_batches)

SMALL = dict(dim=16, feature_space_size=2**12)


@pytest.fixture(scope="module")
def synth50():
    c = generate(SynthSpec(passages=17, seed=3))
    return [parse_example(r) for r in c.records][:50]


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(learning_rate=-1)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    with pytest.raises(ValueError):
        TrainConfig(strategy="nope")


def test_zero_lr_leaves_params_unchanged(synth50):
    init = init_params(16, 2**12, 0.7, 0)
    rep = train(synth50[:1], [], TrainConfig(learning_rate=0.0, epochs=1, **SMALL), params=init)
    assert np.array_equal(rep.params.question_projection, init.question_projection)
    assert np.array_equal(rep.params.context_projection, init.context_projection)


def test_loss_decreases_over_training(synth50):
    rep = train(synth50, [], TrainConfig(epochs=20, **SMALL))
    assert len(rep.epochs) == 20
    assert rep.losses[-1] < rep.losses[0]
    assert all(np.isfinite(rep.losses))
    assert rep.epochs[0].steps == 4  # ceil(50 / 16)


def test_training_is_deterministic(tmp_path, synth50):
    cfg = TrainConfig(epochs=3, **SMALL)
    a = train(synth50, synth50[:20], cfg, out_dir=tmp_path / "a")
    b = train(synth50, synth50[:20], cfg, out_dir=tmp_path / "b")
    assert a.losses == b.losses and a.val_accuracies == b.val_accuracies
    assert (tmp_path / "a/final.ckpt").read_bytes() == (tmp_path / "b/final.ckpt").read_bytes()


def test_outputs_written(tmp_path, synth50):
    rep = train(synth50, synth50[:20], TrainConfig(epochs=2, eval_every=2, **SMALL), out_dir=tmp_path)
    for name in ("final.ckpt", "best.ckpt", "report.jsonl"):
        assert (tmp_path / name).exists()
    lines = [json.loads(x) for x in (tmp_path / "report.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in lines] == [1, 2]
    assert all(0.0 <= r["val_accuracy"] <= 1.0 for r in lines)
    assert rep.step_validation and rep.step_validation[0][0] == 2
    best = load_params(tmp_path / "best.ckpt")
    assert best.dim == 16


def test_divergence_keeps_last_good(tmp_path, synth50):
    with pytest.raises(NumericalError):
        train(synth50, [], TrainConfig(learning_rate=1e300, epochs=3, **SMALL), out_dir=tmp_path)
    assert load_params(tmp_path / "last_good.ckpt").dim == 16


def test_small_step_follows_gradient(synth50):
    params = init_params(8, 2**10, 0.7, 1)
    tb = build_batch(synth50[:8], SamplingStrategy.parse("bm25x2"), make_rng(0))
    lb = tb.encode(params)
    g = loss_gradient(lb, params)
    before = batch_loss(lb, params)
    lr = 1e-6
    sgd_step(params, lb, lr)
    observed = before - batch_loss(lb, params)
    predicted = lr * (np.sum(g.question_projection ** 2) + np.sum(g.context_projection ** 2))
    assert abs(observed - predicted) <= 0.1 * predicted


def test_validation_accuracy_strict_ties():
    origin = [IN_BATCH_GOLD, IN_BATCH_GOLD, BM25_NEGATIVE]
    perfect = LossBatch(np.eye(2, 3), np.eye(3), [0, 1], origin)
    assert validation_accuracy([perfect]) == 1.0
    tie = LossBatch(np.array([[1.0, 0, 0], [0, 1.0, 0]]),
                    np.array([[1.0, 0, 0], [0, 1.0, 0], [1.0, 0, 0]]), [0, 1], origin)
    assert validation_accuracy([tie]) == 0.5


def test_validation_accuracy_empty():
    with pytest.raises(EmptyPool):
        validation_accuracy([])


def test_validation_pools_have_256_candidates():
    c = generate(SynthSpec(passages=100, seed=0))
    dev = [parse_example(r) for r in c.records][:256]
    pools = validation_batches(dev, 256, 0)
    assert len(pools) == 2
    assert all(len(p.questions) == 128 and len(p.candidates) == 256 for p in pools)


def test_untrained_accuracy_near_chance():
    """Random encoders score about 1/256 on 128-question pools (within 5x, averaged over seeds)."""
    c = generate(SynthSpec(passages=43, seed=5))
    dev = [parse_example(r) for r in c.records][:128]
    accs = []
    for seed in range(40):
        pools = validation_batches(dev, 256, seed)
        accs.append(validation_accuracy(pools, init_params(16, 2**12, 0.7, seed)))
    mean = float(np.mean(accs))
    assert 1 / 256 / 5 <= mean <= 5 / 256


def test_concat_datasets_is_seeded_shuffle(synth50):
    a, b = synth50[:10], synth50[10:25]
    merged = concat_datasets([a, b], seed=3)
    assert sorted(map(id, merged)) == sorted(map(id, a + b))
    assert merged == concat_datasets([a, b], seed=3)
    assert merged != a + b
