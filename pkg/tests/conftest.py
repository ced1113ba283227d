import pytest

from lumenpose.dataset import DatasetConfig, build_dataset

# small frames and short trajectories keep training-loop tests fast
TINY = dict(n_patients=2, trajectories_per_lobe=18, frames_per_trajectory=23, width=16, height=16)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny") / "dataset"
    build_dataset(DatasetConfig(**TINY), root)
    return root


@pytest.fixture(scope="session")
def toy_dataset(tmp_path_factory):
    """The default desk-scale dataset."""
    root = tmp_path_factory.mktemp("toy") / "dataset"
    build_dataset(DatasetConfig(), root)
    return root


# -- acceptance summary: one PASS/FAIL line per criterion --------------------------------
_CRITERIA: dict = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid or report.when not in ("setup", "call"):
        return
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_criterion_"):
        return
    number = int(name.split("_")[2])
    entry = _CRITERIA.setdefault(number, {"ok": True, "notes": [], "title": ""})
    if report.failed:
        entry["ok"] = False
    for key, value in report.user_properties:
        if key == "title":
            entry["title"] = value
        elif key == "note":
            entry["notes"].append(value)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] else "FAIL"
        notes = "; ".join(e["notes"])
        terminalreporter.write_line(f"{status} criterion {number:2d}: {e['title']}" + (f" ({notes})" if notes else ""))
