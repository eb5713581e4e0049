import numpy as np
import pytest

from radiovit.dicom import read_dicom
from radiovit.synth import SynthSpec, generate_dataset
from radiovit.volume import build_volume

FIXTURE_DIMS = (32, 32, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def synth_dataset(tmp_path_factory):
    """8-subject planted-signal dataset (32^3, four modalities) on disk."""
    root = tmp_path_factory.mktemp("synth")
    index = generate_dataset(SynthSpec(num_subjects=8, dims=FIXTURE_DIMS, noise_sigma=10.0, seed=1), root)
    return root, index


def load_modality(index, modality="FLAIR", target=FIXTURE_DIMS):
    return [
        build_volume([read_dicom(f) for f in s.series[modality]], target, s.subject_id, modality)
        for s in index.subjects
    ]


@pytest.fixture(scope="session")
def fixture_volumes(synth_dataset):
    _, index = synth_dataset
    return load_modality(index), index.labels


# -- acceptance reporting ----------------------------------------------------

_criteria = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion exercised by a test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, title = marker.args
        outcome = "xfail" if hasattr(report, "wasxfail") else report.outcome
        passed, tests = _criteria.get(number, (True, []))
        _criteria[number] = (passed and outcome == "passed", tests + [(title, item.name, outcome)])


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        passed, tests = _criteria[number]
        title = tests[0][0]
        detail = ", ".join(f"{name}={outcome}" for _, name, outcome in tests)
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}  [{detail}]")
