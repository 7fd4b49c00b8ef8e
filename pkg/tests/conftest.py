import pytest

from weatherseg.scenegen import DATASET_KINDS, generate_dataset

_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance_log():
    """Record one pass/fail line per acceptance criterion for the summary."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_datasets(tmp_path_factory):
    """All nine datasets at 32x32: 24 training and 8 test images each."""
    root = tmp_path_factory.mktemp("data")
    for kind in DATASET_KINDS:
        generate_dataset(kind, root, 7, scale=0.02, size=32)
    return root
