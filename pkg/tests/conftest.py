import pathlib

import pytest

from dawnplan import load_profile

DATA = pathlib.Path(__file__).parent / "data"


@pytest.fixture(scope="session")
def data_dir() -> pathlib.Path:
    return DATA


@pytest.fixture(scope="session")
def uni8():
    """Eight uniform nodes, 1 MiB each, 500 us forward and backward."""
    return load_profile(DATA / "uni8.json")


@pytest.fixture(scope="session")
def tri4():
    """Four nodes with rising times and falling memory."""
    return load_profile(DATA / "tri4.json")
