import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


TINY_UPDATES = {
    "asr": {"conv_channels": [2, 2], "layers": 1, "hidden": 8, "projection": 8, "embed_dim": 4,
            "decoder_hidden": 8, "attention_dim": 8},
    "beamformer": {"layers": 1, "hidden": 8, "projection": 8, "ref_hidden": 8},
    "flow": {"layers": 2, "residual_channels": 4, "dilations": [[1, 1], [2, 2]], "h_dim": 8, "char_dim": 4},
    "corpus": {"train_clean": 6, "train_noisy": 6, "dev": 0, "eval": 3, "min_len": 2, "max_len": 4},
    "trainer": {"log_every": 0, "steps": 10},
}


def tiny_config(manifest=None, **trainer_updates):
    """Small models and corpus so training steps take milliseconds."""
    from flowfront.config import Config, merge

    updates = {k: dict(v) for k, v in TINY_UPDATES.items()}
    if manifest is not None:
        updates["trainer"]["manifest"] = str(manifest)
    updates["trainer"].update(trainer_updates)
    return merge(Config(), updates)


@pytest.fixture(scope="session")
def tiny_manifest(tmp_path_factory):
    from flowfront.datasim import build_corpus

    cfg = tiny_config()
    return build_corpus(tmp_path_factory.mktemp("tiny"), cfg.corpus, cfg.mix, cfg.synth, seed=11)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_manifest):
    from flowfront import trainer

    cfg = tiny_config(tiny_manifest)
    return trainer.load_corpus(cfg, trainer.vocabulary(cfg), "eval")
