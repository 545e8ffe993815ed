from __future__ import annotations

import numpy as np
import pytest
from hypothesis import settings

from exertion_loop.ecg_encoder import EncoderModel, freeze_and_strip
from exertion_loop.reward import UserProfile

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def frozen_encoder():
    """Untrained but frozen encoder; enough for plumbing tests."""
    return freeze_and_strip(EncoderModel(seed=0))


@pytest.fixture
def unit_profile():
    """Thresholds (-1, 1, 2) for both signals and vel_cv 2.2."""
    return UserProfile(hr_mean=90.0, hr_std=10.0, vel_mean=1.0, vel_std=0.5, hr_min=70.0, hr_max=130.0,
                       lambda1_v=2.0, lambda2_v=-1.0, lambda3_v=1.0,
                       lambda1_h=2.0, lambda2_h=-1.0, lambda3_h=1.0, vel_cv=2.2)
