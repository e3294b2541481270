import pathlib
import sys

ROOT = pathlib.Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"
sys.path.insert(0, str(ROOT / "src"))
sys.path.insert(0, str(ROOT / "tests"))

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])


import pytest  # noqa: E402


@pytest.fixture(scope="session")
def f3():
    from hybridtw.config import load_scenario
    return load_scenario(CONFIGS / "f3.toml")


@pytest.fixture(scope="session")
def grid(f3):
    return f3.grid
