"""Shared fixtures."""

import pytest

from tunnelplan import mapenv


@pytest.fixture(scope="session")
def tunnel():
    """The default tunnel map shipped with the package."""
    return mapenv.load_map(mapenv.default_map_path())
