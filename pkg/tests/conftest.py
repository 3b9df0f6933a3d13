import pytest
import torch

N_CRITERIA = 9
_verdicts: dict = {}


@pytest.fixture(scope="module")
def float64():
    old = torch.get_default_dtype()
    torch.set_default_dtype(torch.float64)
    yield
    torch.set_default_dtype(old)


@pytest.fixture
def acceptance():
    """Record one pass/fail line for a numbered acceptance criterion."""

    def record(number: int, title: str, ok: bool, detail: str = ""):
        _verdicts[number] = (title, bool(ok), detail)
        print(_line(number, title, ok, detail))
        return ok

    return record


def _line(number, title, ok, detail):
    tail = f" ({detail})" if detail else ""
    return f"criterion {number} [{'PASS' if ok else 'FAIL'}] {title}{tail}"


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, N_CRITERIA + 1):
        if n in _verdicts:
            terminalreporter.write_line(_line(n, *_verdicts[n]))
        else:
            terminalreporter.write_line(f"criterion {n} [FAIL] not run or did not complete")
