import numpy as np
import pytest
import torch

torch.set_num_threads(1)
torch.use_deterministic_algorithms(True)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    from cycleface import data

    root = tmp_path_factory.mktemp("tiny_ds") / "ds"
    return data.synthesize_dataset(root, count=60, seed=11, splits=(0.8, 0.1, 0.1))


@pytest.fixture(scope="session")
def fixture_vocab():
    from cycleface.attributes import valid_space
    from cycleface.grammar import caption_from_attributes
    from cycleface.text_encoder import Vocabulary

    caps = [caption_from_attributes(a, s) for a in valid_space()[:50] for s in (0, 1)]
    return Vocabulary.build(caps)


@pytest.fixture(scope="session")
def init_bundle(fixture_vocab):
    from cycleface.checkpoint import ModelBundle

    return ModelBundle.initialize(fixture_vocab, seed=3).eval()
