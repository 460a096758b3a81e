import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from scalewise.codec import Image, write_ppm
from scalewise.model import ModelConfig, ScaleSchedule, init_model

settings.register_profile(
    "fast",
    max_examples=25,
    deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("fast")

TINY_SCHEDULE = ScaleSchedule(
    steps=((1, 1), (2, 2), (4, 4), (6, 6)),
    s_key=frozenset({2}),
    s_fine=frozenset({3}),
)

TINY_CFG = ModelConfig(
    d_model=16,
    n_heads=2,
    n_layers=1,
    c=4,
    d_text=16,
    schedule=TINY_SCHEDULE,
    weight_seed=11,
)


@pytest.fixture(scope="session")
def tiny_cfg():
    return TINY_CFG


@pytest.fixture(scope="session")
def tiny_model():
    return init_model(TINY_CFG)


@pytest.fixture(scope="session")
def desk_cfg():
    return ModelConfig()


@pytest.fixture(scope="session")
def desk_model(desk_cfg):
    return init_model(desk_cfg)


def gradient_image(h: int, w: int) -> Image:
    """Moderate-contrast deterministic test image."""
    y, x = np.mgrid[0:h, 0:w]
    px = np.stack(
        [
            40 + (120 * y) // max(h - 1, 1),
            60 + (110 * x) // max(w - 1, 1),
            90 + (60 * (y + x)) // max(h + w - 2, 1),
        ],
        axis=-1,
    ).astype(np.uint8)
    return Image(px)


@pytest.fixture()
def style_image_path(tmp_path):
    path = tmp_path / "style.ppm"
    write_ppm(gradient_image(32, 32), path)
    return str(path)


@pytest.fixture()
def tiny_style_image_path(tmp_path):
    path = tmp_path / "style_tiny.ppm"
    write_ppm(gradient_image(6, 6), path)
    return str(path)
