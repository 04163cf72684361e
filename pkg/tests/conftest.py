import numpy as np
import pytest

from cidlab.measures import GridDensity, MixedMeasure1D

_RESULTS = pytest.StashKey[list]()

# one grid shared by every random density, so TV never resamples
SHARED_LO, SHARED_STEP, SHARED_N = -12.0, 24.0 / 2047, 2048


def random_mixed(gen: np.random.Generator) -> MixedMeasure1D:
    """A probability measure with up to 3 atoms on a small lattice and a
    normal-mixture density on the shared grid; either part may be absent."""
    kind = gen.integers(0, 3)  # 0 atoms only, 1 density only, 2 both
    w = 0.0 if kind == 0 else (1.0 if kind == 1 else gen.uniform(0.1, 0.9))
    dens = None
    if w > 0:
        x = SHARED_LO + SHARED_STEP * np.arange(SHARED_N)
        mu, sd = gen.uniform(-3, 3), gen.uniform(0.3, 2.0)
        f = np.exp(-0.5 * ((x - mu) / sd) ** 2)
        grid = GridDensity(SHARED_LO, SHARED_STEP, f)
        dens = GridDensity(SHARED_LO, SHARED_STEP, w * f / grid.integral())
    if w < 1:
        k = gen.integers(1, 4)
        locs = gen.choice(np.arange(-4.0, 4.5, 0.5), size=k, replace=False)
        p = gen.dirichlet(np.ones(k)) * (1 - w)
        keep = p > 0
        return MixedMeasure1D(locs[keep], p[keep], dens)
    return MixedMeasure1D([], [], dens)


@pytest.fixture
def record(request):
    """record(criterion, ok, detail): log an acceptance line, then assert."""

    def _record(criterion: str, ok: bool, detail: str = ""):
        request.config.stash.setdefault(_RESULTS, []).append((criterion, bool(ok), detail))
        assert ok, f"criterion {criterion}: {detail}"

    return _record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(_RESULTS, [])
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for criterion, ok, detail in sorted(results, key=lambda r: float(r[0])):
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}")
