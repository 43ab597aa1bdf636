import numpy as np
import pytest

from kspace_bench.phantom import PhantomSpec, generate_phantom, phantom_to_kspace


@pytest.fixture(scope="session")
def small_case():
    """A 64x48, 4-frame, 4-coil phantom with its k-space."""
    spec = PhantomSpec(matrix=(64, 48), frames=4, coils=4, seed=3)
    image, csm = generate_phantom(spec)
    return spec, image, csm, phantom_to_kspace(image, csm)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail)``; the caller still asserts."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
