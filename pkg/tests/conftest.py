import numpy as np
import pytest

from fedarena import mlp


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def tiny_net(seed=0, p=6, hidden=8, h=3):
    return mlp.init_params(((p, hidden), (hidden, h)), seed=seed)


def perturbed(params, scale, rng):
    """Shift parameters off their init so ReLU units are active and biases nonzero."""
    return mlp.ModelParams(
        flat=params.flat + scale * rng.normal(size=params.dim),
        layer_shapes=params.layer_shapes,
    )


def random_batch(rng, n, p=6, h=3):
    return rng.normal(size=(n, p)), rng.integers(0, h, size=n)


def gradient_like_refs(rng, params, n_refs, n_batch=8, h=3):
    """Benign-looking references: gradients of random batches under params."""
    p = params.input_dim
    refs = []
    for _ in range(n_refs):
        X, y = rng.normal(size=(n_batch, p)), rng.integers(0, h, size=n_batch)
        refs.append(mlp.gradient(params, X, y))
    return np.stack(refs)
