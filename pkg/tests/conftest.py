import pytest

from factorflow import precision


@pytest.fixture(autouse=True)
def default_float64():
    """Each test starts in 64-bit; tests that train switch locally."""
    precision.set_precision("float64")
    yield
    precision.set_precision("float64")
