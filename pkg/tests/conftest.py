import os

import pytest
from hypothesis import settings

FIXTURES = os.path.join(os.path.dirname(os.path.abspath(__file__)), "fixtures")

settings.register_profile("default", max_examples=60, deadline=None)
settings.load_profile("default")


@pytest.fixture
def fixture_path():
    return lambda name: os.path.join(FIXTURES, name)
