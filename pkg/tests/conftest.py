import re

import numpy as np
import pytest

from covlaw import PopulationModel, solve_profile

# phi * pi = 0.01 d_10 + 0.01 d_5 + 0.05 d_1.5 + 0.03 d_1 at phi = 0.1
FOUR_ATOMS = ((10.0, 0.1), (5.0, 0.1), (1.5, 0.5), (1.0, 0.3))


def four_atom_model(phi=0.1, dims=(100, 100, 1000)):
    return PopulationModel(phi=phi, atoms=FOUR_ATOMS, dims=dims)


def mp_quadratic_m(z, phi):
    """Root with Im m > 0 (or the limit from above) of z m^2 + (z + 1 - phi) m + 1 = 0."""
    z = complex(z)
    roots = np.roots([z, z + 1 - phi, 1.0])
    if z.imag > 0:
        return complex(roots[np.argmax(roots.imag)])
    # on the real axis pick the root continuous with the upper half plane
    zp = z + 1e-7j
    ref = np.roots([zp, zp + 1 - phi, 1.0])
    ref = ref[np.argmax(ref.imag)]
    return complex(roots[np.argmin(np.abs(roots - ref))])


@pytest.fixture(scope="session")
def mp_quarter():
    return PopulationModel.identity(0.25, dims=(250, 250, 1000))


@pytest.fixture(scope="session")
def four_atom():
    return four_atom_model()


@pytest.fixture(scope="session")
def four_atom_profile(four_atom):
    return solve_profile(four_atom)


_ACCEPTANCE = {}
_DETAILS = {}


@pytest.fixture
def criterion_log(request):
    """Collects ``name=value`` detail lines for the acceptance summary."""
    m = re.search(r"test_criterion_(\d+)", request.node.name)
    lines = _DETAILS.setdefault(int(m.group(1)), [])

    def log(text):
        lines.append(text)
        print(text)

    return log


def pytest_runtest_logreport(report):
    if report.when != "call":
        return
    m = re.search(r"test_criterion_(\d+)", report.nodeid)
    if m and "test_acceptance.py" in report.nodeid:
        _ACCEPTANCE[int(m.group(1))] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"ACCEPTANCE {k} {_ACCEPTANCE[k]}")
        for line in _DETAILS.get(k, []):
            terminalreporter.write_line(f"    {line}")
