import numpy as np
import pytest

from starguide.geometry import JunctionSpec, WaveguideSpec


@pytest.fixture
def strip():
    return WaveguideSpec(JunctionSpec("StraightStrip"))


@pytest.fixture
def lbend():
    return WaveguideSpec(JunctionSpec("LBend"))


def bulged_strip(ppw: int, col: int | None = None) -> WaveguideSpec:
    """Unit square junction with a one-pixel bump on its top wall at column ``col``."""
    bm = np.zeros((ppw + 1, ppw), dtype=bool)
    bm[:ppw] = True
    bm[ppw, ppw // 2 if col is None else col] = True
    return WaveguideSpec(JunctionSpec("CustomMask", bitmap=bm, pixels_per_width=ppw,
                                      faces=(("left", 0), ("right", 0))), branch_angles=(np.pi, 0.0))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
