import numpy as np
import pytest

from videoprnu.prnu import Fingerprint
from videoprnu.synth import make_sensor


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def sensor_fingerprint(sensor) -> Fingerprint:
    """Ground-truth reference: the sensor pattern itself, unit variance."""
    k = sensor.k / sensor.k.std()
    return Fingerprint(values=k.astype(np.float32), n_sources=1, camera_label="gt")


@pytest.fixture
def small_sensor():
    return make_sensor((192, 192), strength=0.1, seed=42)
