import numpy as np
import pytest

from mebm.data import DatasetManifest, PhonemeVocab, SynthSpec, synth_session, write_megb


def write_dataset(root, n_train=3, n_val=2, events=6, snr=4.0, seed=0, **spec_kw):
    """Synthetic MEGB sessions plus manifest under ``root``; returns the manifest path."""
    spec = SynthSpec(n_sessions=n_train + n_val, events_per_class_per_session=events, snr=snr,
                     seed=seed, **spec_kw)
    entries = []
    for s in range(spec.n_sessions):
        rec = synth_session(spec, s)
        name = f"{rec.session_id}.megb"
        write_megb(rec, root / name)
        entries.append((name, "train" if s < n_train else "validation"))
    PhonemeVocab().save(root / "vocab.txt")
    DatasetManifest(entries).save(root / "manifest.json")
    return root / "manifest.json"


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    return write_dataset(tmp_path_factory.mktemp("small"), events=6)


@pytest.fixture(scope="session")
def small_sessions():
    spec = SynthSpec(n_sessions=3, events_per_class_per_session=10, snr=2.0, seed=3)
    return [synth_session(spec, s) for s in range(spec.n_sessions)]


@pytest.fixture
def rng():
    return np.random.default_rng(0)


# -- acceptance summary ---------------------------------------------------------------------------

_criteria: list[tuple[int, str, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion checked by this test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or not (rep.when == "call" or rep.failed):
        return
    detail = dict(rep.user_properties).get("detail", "")
    _criteria.append((mark.args[0], "PASS" if rep.passed else "FAIL", item.name, detail))


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, name, detail in sorted(_criteria):
        terminalreporter.write_line(f"criterion {n:>2}: {status}  {name}  {detail}".rstrip())
