import contextlib
import os
import time

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


_verdicts = pytest.StashKey[dict]()


class _Record:
    detail = ""


@pytest.fixture
def criterion(request):
    """Context manager that times a block and records one verdict line."""
    verdicts = request.config.stash.setdefault(_verdicts, {})

    @contextlib.contextmanager
    def run(number: int, name: str, limit: float | None = None):
        rec = _Record()
        start = time.perf_counter()
        ok = False
        try:
            yield rec
            elapsed = time.perf_counter() - start
            if limit is not None:
                assert elapsed < limit, f"took {elapsed:.2f} s, limit {limit} s"
            ok = True
        finally:
            elapsed = time.perf_counter() - start
            line = (f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {name}  "
                    f"[{elapsed:.2f} s] {rec.detail}")
            verdicts[number] = line
            print(line)

    return run


def pytest_terminal_summary(terminalreporter, config):
    verdicts = config.stash.get(_verdicts, {})
    if verdicts:
        terminalreporter.section("acceptance criteria")
        for k in sorted(verdicts):
            terminalreporter.write_line(verdicts[k])
