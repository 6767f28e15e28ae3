from __future__ import annotations

import pytest

from lockmem.demos import generate_dataset
from lockmem.vq import VqConfig, cluster_codebook, train_vqvae

SMALL_VQ = VqConfig(codebook_size=32, latent_dim=16, hidden=(64,), epochs=4, clusters=4)


@pytest.fixture(scope="session")
def small_demos():
    demos, _ = generate_dataset([20], 6, seed=5, assets=["safe_00"])
    return demos


@pytest.fixture(scope="session")
def small_vq(small_demos):
    model = train_vqvae(small_demos, SMALL_VQ, seed=0)
    return model.with_clusters(cluster_codebook(model.codebook, 4, seed=0, usage=model.usage))
