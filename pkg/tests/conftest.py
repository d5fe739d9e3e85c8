import numpy as np
import pytest

from attrdelta import (
    DeltaRegistry,
    extract_clip_diff_delta,
    get_backbone,
    get_encoder,
)
from attrdelta.prompts import ContrastivePromptSet, PromptTuple


@pytest.fixture(scope="session")
def enc_plain():
    return get_encoder("toy-ws16")


@pytest.fixture(scope="session")
def enc_agg():
    return get_encoder("toy-agg16")


@pytest.fixture(scope="session")
def enc_sub():
    return get_encoder("toy-agg16-sub4")


@pytest.fixture(scope="session")
def backbone():
    return get_backbone("toy-linear16")


@pytest.fixture(scope="session")
def mix_backbone():
    return get_backbone("toy-mix16")


@pytest.fixture(scope="session")
def age_pset():
    return ContrastivePromptSet(
        attribute_name="age",
        tuples=(
            PromptTuple("young [person]", "[person]", "old [person]"),
            PromptTuple("young [woman]", "[woman]", "old [woman]"),
        ),
        prefixes=("a photo of a", "a portrait of a"),
    )


@pytest.fixture(scope="session")
def balanced_pset():
    """Neutral prompts all have the same token count; spans are one token."""
    return ContrastivePromptSet(
        attribute_name="age",
        tuples=(
            PromptTuple("young [person]", "calm [person]", "old [person]"),
            PromptTuple("young [woman]", "calm [woman]", "old [woman]"),
            PromptTuple("young [man]", "calm [man]", "old [man]"),
        ),
        prefixes=("a photo of a",),
    )


@pytest.fixture(scope="session")
def age_delta(enc_agg, age_pset):
    return extract_clip_diff_delta(enc_agg, age_pset)


@pytest.fixture(scope="session")
def smile_delta(enc_agg):
    pset = ContrastivePromptSet(
        attribute_name="smile",
        tuples=(
            PromptTuple("frowning [person]", "[person]", "smiling [person]"),
            PromptTuple("frowning [woman]", "[woman]", "smiling [woman]"),
        ),
        prefixes=("a photo of a",),
    )
    return extract_clip_diff_delta(enc_agg, pset)


@pytest.fixture
def registry(tmp_path):
    return DeltaRegistry(tmp_path / "deltas")


def pooled_mean(encoder, prompt):
    tp = encoder.encode(prompt)
    return tp.embeddings[~tp.special_mask].mean(axis=0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240823)
