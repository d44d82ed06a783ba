import numpy as np
import pytest
import torch
from PIL import Image

from dermalign.corpus import LABEL_CODES, Corpus
from dermalign.evaluate import cohen_kappa, predict_labels
from dermalign.model import load_checkpoint
from dermalign.notegen import synthesize
from dermalign.preprocess import IMAGE_SIZE
from dermalign.train import TrainConfig, TrainError, train, train_image_only

from conftest import make_record

_COLORS = {
    "BEK": (200, 160, 80),
    "NEV": (90, 60, 30),
    "ACK": (220, 60, 60),
    "BCC": (230, 150, 170),
    "MEL": (20, 20, 20),
}


@pytest.fixture(scope="module")
def tiny_setup(tmp_path_factory):
    """Color-separable micro corpus with a prebuilt cache (6 train + 2 val per class)."""
    tmp = tmp_path_factory.mktemp("train")
    cache = tmp / "cache"
    cache.mkdir()
    rng = np.random.default_rng(0)
    records = []
    i = 0
    for split, per_class in (("train", 6), ("val", 2)):
        for label in LABEL_CODES:
            for _ in range(per_class):
                rec = make_record(f"{split}-{label}-{i:03d}", label, split)
                arr = np.clip(
                    np.full((IMAGE_SIZE, IMAGE_SIZE, 3), _COLORS[label], dtype=np.float64)
                    + rng.normal(0, 8, (IMAGE_SIZE, IMAGE_SIZE, 3)),
                    0,
                    255,
                ).astype(np.uint8)
                Image.fromarray(arr).save(cache / f"{rec.id}.png")
                records.append(rec)
                i += 1
    corpus = Corpus(records)
    notes, _ = synthesize(corpus, "M")
    return corpus, notes, cache


FAST = dict(epochs=3, learning_rate=1e-3, batch_size=8, shared_dim=16, text_dim=32)


class TestTrain:
    def test_beats_untrained_baseline(self, tiny_setup):
        corpus, notes, cache = tiny_setup
        config = TrainConfig(seed=0, **FAST)
        model, meta = train(corpus, notes, config, cache)
        val = corpus.split_records("val")
        labels = [r.label for r in val]
        trained_kappa = cohen_kappa(labels, predict_labels(model, val, cache))
        from dermalign.model import ModelConfig, build_model
        from dermalign.preprocess import default_tokenizer

        untrained = build_model(
            ModelConfig(shared_dim=16, text_dim=32, vocab_size=len(default_tokenizer())),
            seed=0,
        )
        untrained_kappa = cohen_kappa(labels, predict_labels(untrained, val, cache))
        assert trained_kappa > untrained_kappa

    def test_deterministic_checkpoints(self, tiny_setup, tmp_path):
        corpus, notes, cache = tiny_setup
        config = TrainConfig(seed=1, **FAST)
        p1, p2 = tmp_path / "a.dmal", tmp_path / "b.dmal"
        m1, _ = train(corpus, notes, config, cache, out_path=p1)
        m2, _ = train(corpus, notes, config, cache, out_path=p2)
        for a, b in zip(m1.state_dict().values(), m2.state_dict().values()):
            assert torch.equal(a, b)
        assert p1.read_bytes() == p2.read_bytes()

    def test_selection_is_history_maximum(self, tiny_setup):
        corpus, notes, cache = tiny_setup
        config = TrainConfig(seed=2, **FAST)
        _, meta = train(corpus, notes, config, cache)
        kappas = [h["val_kappa"] for h in meta["history"]]
        assert meta["best_val_kappa"] == max(kappas)
        assert kappas[meta["best_epoch"]] == meta["best_val_kappa"]

    def test_epochs_zero_rejected(self):
        with pytest.raises(TrainError, match="epochs"):
            TrainConfig(epochs=0)

    def test_missing_notes_listed(self, tiny_setup):
        corpus, notes, cache = tiny_setup
        partial = notes[: len(notes) // 2]
        config = TrainConfig(seed=0, **FAST)
        with pytest.raises(TrainError, match="missing notes"):
            train(corpus, partial, config, cache)

    def test_strategy_mismatch_rejected(self, tiny_setup):
        corpus, notes, cache = tiny_setup
        config = TrainConfig(seed=0, strategy="P3", **FAST)
        with pytest.raises(TrainError, match="do not match config strategy"):
            train(corpus, notes, config, cache)

    def test_reload_matches_trained_model(self, tiny_setup, tmp_path):
        corpus, notes, cache = tiny_setup
        config = TrainConfig(seed=3, **FAST)
        path = tmp_path / "ckpt.dmal"
        model, _ = train(corpus, notes, config, cache, out_path=path)
        loaded, _ = load_checkpoint(path)
        val = corpus.split_records("val")
        assert predict_labels(model, val, cache) == predict_labels(loaded, val, cache)


class TestImageOnly:
    def test_no_text_parameters(self, tiny_setup, tmp_path):
        corpus, _, cache = tiny_setup
        config = TrainConfig(seed=0, **FAST)
        path = tmp_path / "img.dmal"
        model, meta = train_image_only(corpus, config, cache, out_path=path)
        assert meta["strategy"] is None
        loaded, _ = load_checkpoint(path)
        assert not any(name.startswith("text_") for name in loaded.state_dict())

    def test_deterministic(self, tiny_setup):
        corpus, _, cache = tiny_setup
        config = TrainConfig(seed=5, **FAST)
        m1, _ = train_image_only(corpus, config, cache)
        m2, _ = train_image_only(corpus, config, cache)
        for a, b in zip(m1.state_dict().values(), m2.state_dict().values()):
            assert torch.equal(a, b)

    def test_learns_on_separable_colors(self, tiny_setup):
        corpus, _, cache = tiny_setup
        config = TrainConfig(seed=0, **FAST)
        _, meta = train_image_only(corpus, config, cache)
        assert meta["best_val_kappa"] > 0.0


class TestConfig:
    def test_yaml_roundtrip(self, tmp_path):
        config = TrainConfig(seed=9, epochs=4, strategy="M_P1")
        path = tmp_path / "cfg.yaml"
        import yaml

        path.write_text(yaml.safe_dump({"train": config.to_dict()}))
        loaded = TrainConfig.from_yaml(path)
        assert loaded == config
