import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from nmodal.data import SynthConfig, generate_synthetic, split_bundle
from nmodal.model import TrainConfig, train

# Shared scale for the heavyweight criteria: 1000 train posts plus a
# held-out pool big enough for 100-post populations.
ACCEPT_SEED = 606
ACCEPT_POSTS = 1112
ACCEPT_SIGMA = 0.05


@pytest.fixture(scope="session")
def acceptance_bundle():
    return generate_synthetic(
        SynthConfig(post_count=ACCEPT_POSTS, noise_sigma=ACCEPT_SIGMA, seed=ACCEPT_SEED)
    )


@pytest.fixture(scope="session")
def acceptance_split(acceptance_bundle):
    return split_bundle(acceptance_bundle)


@pytest.fixture(scope="session")
def acceptance_model(acceptance_split):
    train_split, _ = acceptance_split
    state, log = train(train_split, TrainConfig(epochs=50, seed=ACCEPT_SEED))
    return state, log


@pytest.fixture(scope="session")
def small_bundle():
    return generate_synthetic(
        SynthConfig(
            post_count=200,
            modalities=[("text", 24), ("image", 20), ("video", 28)],
            noise_sigma=0.05,
            account_count=5,
            seed=11,
        )
    )


@pytest.fixture(scope="session")
def small_model(small_bundle):
    state, log = train(small_bundle, TrainConfig(epochs=5, batch_size=32, d_out=16, seed=11))
    return state, log
