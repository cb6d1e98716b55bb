import pytest
from hypothesis import settings

from otut.corpus import SeedFilterConfig, seed_filter
from otut.desk import make_desk_corpus
from otut.encoders import reference_bundle
from otut.synthesis import SynthesisConfig, assemble_dataset

# timing on a shared single core is too noisy for per-example deadlines
settings.register_profile("default", deadline=None)
settings.load_profile("default")


@pytest.fixture(scope="session")
def desk_pairs():
    return make_desk_corpus(600, seed=11)


@pytest.fixture(scope="session")
def bundle(desk_pairs):
    return reference_bundle([p.source_text for p in desk_pairs])


@pytest.fixture(scope="session")
def clean_pairs(desk_pairs, bundle):
    return [p for p in desk_pairs if seed_filter(p, SeedFilterConfig(), bundle.xsim)]


@pytest.fixture(scope="session")
def small_dataset(clean_pairs, bundle):
    return assemble_dataset(clean_pairs, bundle, SynthesisConfig(seed=5), n_samples=200)


# -- acceptance summary -----------------------------------------------------

ACCEPTANCE_DETAIL: dict = {}


@pytest.fixture
def record():
    """Store a one-line measurement summary for an acceptance criterion."""

    def _record(number: int, detail: str):
        ACCEPTANCE_DETAIL[number] = detail

    return _record


def pytest_terminal_summary(terminalreporter):
    outcomes = {}
    for key in ("passed", "failed", "error"):
        for rep in terminalreporter.stats.get(key, []):
            nodeid = getattr(rep, "nodeid", "")
            if "test_acceptance.py::test_criterion_" not in nodeid:
                continue
            number = int(nodeid.split("test_criterion_")[1].split("_")[0])
            if rep.when == "call" or key != "passed":
                outcomes[number] = outcomes.get(number, "PASS") if key == "passed" else "FAIL"
    if not outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        detail = ACCEPTANCE_DETAIL.get(number, "no measurement recorded")
        terminalreporter.write_line(f"criterion {number}: {outcomes[number]} ({detail})")
