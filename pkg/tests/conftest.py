import pytest

ACCEPTANCE_SEED = 2026
_RESULTS = {}


@pytest.fixture(scope="session")
def bank_cache(request):
    """Directory where observable banks persist between test sessions."""
    return str(request.config.cache.mkdir("phi4lab-banks"))


@pytest.fixture
def record():
    """Record one acceptance line: ``record(key, ok, detail)``."""
    def _record(key, ok, detail=""):
        _RESULTS[key] = (bool(ok), detail)
        return ok
    return _record


def _order(key):
    head, _, tail = key.partition(".")
    return int(head), tail


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_RESULTS, key=_order):
        ok, detail = _RESULTS[key]
        terminalreporter.write_line(f"criterion {key}: {'PASS' if ok else 'FAIL'}  {detail}")
