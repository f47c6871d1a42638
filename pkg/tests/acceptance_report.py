"""Timed pass/fail records for the acceptance criteria."""
import contextlib
import time

RESULTS = {}


@contextlib.contextmanager
def criterion(number, title, limit_s):
    """Time a criterion body, fail it if it overruns ``limit_s`` and record the outcome."""
    start = time.perf_counter()
    status, detail = "FAIL", ""
    try:
        yield
        elapsed = time.perf_counter() - start
        if limit_s is not None and elapsed >= limit_s:
            detail = f"runtime {elapsed:.1f} s exceeds {limit_s:g} s"
            raise AssertionError(detail)
        status = "PASS"
    except BaseException as exc:
        detail = detail or f"{type(exc).__name__}: {str(exc).splitlines()[0] if str(exc) else ''}"
        raise
    finally:
        elapsed = time.perf_counter() - start
        limit = f" (limit {limit_s:g} s)" if limit_s is not None else ""
        line = f"[{status}] criterion {number:2d}: {title} in {elapsed:.2f} s{limit}"
        if detail:
            line += f" -- {detail}"
        RESULTS[number] = line
        print(line)
