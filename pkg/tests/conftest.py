import warnings

import numpy as np
import pytest

from nfrsma import SystemConfig, ChannelSet, sample_channels, channel_rng

warnings.filterwarnings("ignore", message="Solution may be inaccurate")


def small_cfg(**kw):
    base = dict(N=16, L=4, K=2, seed=0)
    base.update(kw)
    return SystemConfig(**base)


def synthetic_channels(rng, K=2, N=8, eps_scale=0.1):
    """Unit-scale random channels for math-level tests (no physical units)."""
    h = (rng.standard_normal((K, N)) + 1j * rng.standard_normal((K, N))) / np.sqrt(2)
    beta = np.linalg.norm(h, axis=1) / np.sqrt(N)
    return ChannelSet(h_hat=h, eps=eps_scale * np.linalg.norm(h, axis=1),
                      geometry=None, beta=beta)


def random_precoder(rng, N, S, power=None):
    P = rng.standard_normal((N, S)) + 1j * rng.standard_normal((N, S))
    if power is not None:
        P *= np.sqrt(power) / np.linalg.norm(P)
    return P


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
