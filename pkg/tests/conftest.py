import numpy as np
import pytest
from hypothesis import settings

from modekit import synth

settings.register_profile("modekit", deadline=None, max_examples=40, derandomize=True)
settings.load_profile("modekit")

# filled by tests/test_acceptance.py, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {number:2d} {title}: {detail}")


@pytest.fixture(scope="session")
def problem2():
    """Default synthesized flow: 3.1 and 5.2 Hz, 5 realizations, 32x32."""
    spec = synth.SynthSpec()
    return spec, synth.generate_synthesized_flow(spec), synth.synthesized_flow_truth(spec)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
