"""End-to-end smoke tests for the python module."""

import math

import pytest

import seqtrans


@pytest.fixture(scope="module")
def dataset():
    return seqtrans.synth_dataset(
        categories=4, items_per_cat=6, seq_len=10, users=60, seed=3
    )


def test_module_surface():
    assert seqtrans.__version__
    assert "tstm" in seqtrans.variants()
    assert "s-tstm" in seqtrans.variants()


def test_synth_and_stats(dataset):
    stats = dataset.stats()
    assert stats["users"] == 60
    assert stats["interactions"] == 60 * 10
    assert 0.0 <= stats["sparsity"] <= 1.0
    assert dataset.n_categories == 4


def test_train_evaluate_roundtrip(dataset, tmp_path):
    ckpt, history = seqtrans.train(
        dataset,
        variant="ci",
        d=8,
        window=4,
        batch_size=16,
        max_epochs=2,
        patience=2,
        seed=11,
        negatives=5,
        cutoffs=[1, 5],
    )
    assert ckpt.variant == "ci"
    assert len(history) == 2
    assert all(math.isfinite(row["train_loss"]) for row in history)

    metrics = seqtrans.evaluate(ckpt, dataset, split="test")
    assert metrics["cases"] == 60
    assert metrics["hit"][1] == metrics["ndcg"][1]
    assert 0.0 <= metrics["hit"][1] <= metrics["hit"][5] <= 1.0

    path = tmp_path / "ci.ckpt"
    ckpt.save(str(path))
    again = seqtrans.load_checkpoint(str(path))
    assert seqtrans.evaluate(again, dataset, split="test") == metrics

    cats = seqtrans.category_metrics(ckpt, dataset, split="test")
    assert 0.0 <= cats["hit"][1] <= 1.0


def test_training_is_deterministic(dataset):
    kwargs = dict(
        variant="tstm",
        d=8,
        window=4,
        batch_size=16,
        max_epochs=2,
        patience=2,
        seed=5,
        negatives=5,
        cutoffs=[1, 5],
    )
    _, h1 = seqtrans.train(dataset, **kwargs)
    _, h2 = seqtrans.train(dataset, **kwargs)
    assert h1 == h2


def test_gradcheck():
    report = seqtrans.gradcheck("tstm")
    assert report["max_rel_err"] < 1e-4


def test_oracle_and_scoring(dataset, tmp_path):
    oracle = seqtrans.bayes_oracle(
        categories=4, items_per_cat=6, seq_len=10, users=60, seed=3, negatives=5
    )
    assert oracle["category_accuracy"] == 1.0  # deterministic cycle

    tsv = tmp_path / "events.tsv"
    seqtrans.synth_tsv(str(tsv), categories=4, items_per_cat=6, seq_len=10, users=60, seed=3)
    prepared = seqtrans.prepare_tsv(str(tsv), item_min=0, user_min=0)
    assert prepared.stats() == dataset.stats()

    ckpt, _ = seqtrans.train(
        dataset, variant="lstm", d=8, window=4, batch_size=16, max_epochs=1,
        patience=1, seed=1, negatives=5, cutoffs=[1, 5],
    )
    scores = seqtrans.score_candidates(ckpt, [1, 2], [1, 1], 0, [1, 2, 3])
    assert len(scores) == 3
