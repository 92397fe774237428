import numpy as np
import pytest

from sandwich_qpe import RngStream, SpectralModel, generate_model


def random_model(seed: int, size: int = 8) -> SpectralModel:
    """A generic random model for property tests."""
    return generate_model("uniform_random", size, seed)


def reflect(model: SpectralModel) -> SpectralModel:
    """Mirror the spectrum: lambda -> -lambda with identical weights."""
    from sandwich_qpe import wrap_angle

    return SpectralModel(
        [wrap_angle(-v) for v in model.eigenphases], model.weights, label="reflected"
    )


@pytest.fixture
def stream():
    return RngStream(1234)


@pytest.fixture
def rng():
    return np.random.default_rng(99)
