import pytest

from mmimpute.synth import GeneratorConfig, make_dataset


@pytest.fixture(scope="session")
def tiny():
    """60 records split 36/12/12."""
    return make_dataset(GeneratorConfig(n=60, seed=11))


@pytest.fixture(scope="session")
def small():
    return make_dataset(GeneratorConfig(n=300, seed=5))


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        ok, detail = mod.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
