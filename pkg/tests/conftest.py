import numpy as np
import pytest

from sssbench.corpus import UserSequence, load_dataset, leave_one_out
from sssbench.synthetic import bundled_dataset_path, generate_log, write_log


@pytest.fixture(scope="session")
def bundled():
    return load_dataset(bundled_dataset_path())


@pytest.fixture(scope="session")
def small_log(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "small.tsv"
    write_log(generate_log(num_users=120, num_items=40, seed=3), path)
    return path


@pytest.fixture(scope="session")
def small(small_log):
    return load_dataset(small_log)


def random_sequences(rng, count, lo=2, hi=60, num_items=30):
    return [
        UserSequence(u + 1, tuple(int(v) for v in rng.integers(1, num_items + 1, size=rng.integers(lo, hi + 1))))
        for u in range(count)
    ]


def make_split(seqs, num_items=None):
    return leave_one_out([UserSequence(i + 1, tuple(s)) for i, s in enumerate(seqs)], num_items)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance criteria report: one line per criterion at the end of the run

_criteria: dict[int, tuple[str, str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number")


def pytest_runtest_logreport(report):
    props = dict(report.user_properties)
    marker = props.get("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        outcome = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[report.outcome]
        detail = props.get("detail", "")
        if report.outcome == "skipped" and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2].removeprefix("Skipped: ")
        _criteria[marker] = (outcome, detail)


def pytest_collection_modifyitems(items):
    for item in items:
        m = item.get_closest_marker("criterion")
        if m is not None:
            item.user_properties.append(("criterion", m.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        outcome, detail = _criteria[n]
        terminalreporter.write_line(f"criterion {n:2d}: {outcome}  {detail}".rstrip())
