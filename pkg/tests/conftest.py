import pathlib

import pytest

FIXTURES = pathlib.Path(__file__).parent / "fixtures"


@pytest.fixture
def fig_example_src() -> str:
    return (FIXTURES / "fig_example.ipl").read_text()


def fixture_path(name: str) -> pathlib.Path:
    return FIXTURES / name
