import pytest

from martsia import maabe
from martsia.policy import namespaced
from martsia.rng import SeededRandom

UNIVERSE = ["A", "B", "C", "D"]
SLICE3 = "(43175279@4+ and ((Supplier@2+ and International@B) or Manufacturer@A))"
NAMES = ["43175279", "Supplier", "International", "Manufacturer", "Customs", "Carrier"]

_acceptance = []


@pytest.fixture(scope="session")
def gp():
    return maabe.global_setup(b"test")


@pytest.fixture(scope="session")
def keypairs(gp):
    rng = SeededRandom(b"authorities")
    return {a: maabe.authority_setup(gp, a, [namespaced(n, a) for n in NAMES], rng.fork(a)) for a in UNIVERSE}


@pytest.fixture(scope="session")
def publics(keypairs):
    out = {}
    for kp in keypairs.values():
        out.update(kp.publics)
    return out


@pytest.fixture(scope="session")
def issue(gp, keypairs):
    """issue(gid, attrs) -> components for namespaced attributes."""
    def _issue(gid, attrs):
        return [maabe.keygen(gp, keypairs[a.rsplit("@", 1)[1]], gid, a) for a in attrs]
    return _issue


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None and rep.when == "call":
        n, title = mark.args
        _acceptance.append((n, title, rep.outcome))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for n, title, outcome in sorted(_acceptance):
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"[{verdict}] criterion {n:2d}: {title}")
