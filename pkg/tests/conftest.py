import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def exact_spectrum_table(variances, n, seed=0):
    """Rows whose sample covariance (ddof=0) has exactly the given eigenvalues, in a random rotation."""
    r = np.random.default_rng(seed)
    d = len(variances)
    g = r.standard_normal((n, d))
    g -= g.mean(axis=0)
    # whiten the sample so its covariance is exactly I, then scale
    u, s, vt = np.linalg.svd(g, full_matrices=False)
    white = u * np.sqrt(n)
    q, _ = np.linalg.qr(r.standard_normal((d, d)))
    return (white * np.sqrt(np.asarray(variances, dtype=float))) @ q.T + r.standard_normal(d)


# -- acceptance summary: one line per criterion, aggregated over its tests

_CRITERIA: dict[int, list] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        detail = "; ".join(f"{k}={v}" for k, v in rep.user_properties)
        _CRITERIA.setdefault(mark.args[0], []).append((item.name, rep.outcome, detail))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        runs = _CRITERIA[n]
        ok = all(outcome == "passed" for _, outcome, _ in runs)
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}")
        for name, outcome, detail in runs:
            terminalreporter.write_line(f"    {outcome:7s} {name}" + (f"  [{detail}]" if detail else ""))
