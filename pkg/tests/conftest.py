import numpy as np
import pytest

from tdsnc.curves import Curve

ACCEPTANCE_LINES: dict = {}


def record_acceptance(number: int, passed: bool, detail: str):
    ACCEPTANCE_LINES[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(ACCEPTANCE_LINES[number])


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])


def random_pwl(rng: np.random.Generator, max_x: int = 20, jumps: bool = False) -> Curve:
    """Random increasing PWL curve with integer breakpoints and quarter-step values."""
    k = int(rng.integers(2, 6))
    xs = np.concatenate([[0], np.sort(rng.choice(np.arange(1, max_x), size=k - 1, replace=False))])
    incs = rng.integers(0, 12, size=k) / 4.0
    vs = np.cumsum(incs)
    pts = [(float(x), float(v)) for x, v in zip(xs, vs)]
    if jumps:
        x_j = float(xs[-1])
        pts.append((x_j, pts[-1][1] + float(rng.integers(1, 5))))
    slope = float(rng.choice([0.0, 0.5, 1.0, 1.5, 2.0]))
    return Curve(pts, slope)


def random_staircase(rng: np.random.Generator, steps: int = 8) -> Curve:
    """Right-continuous counting staircase with integer jump instants and heights."""
    pts = [(0.0, float(rng.integers(0, 3)))]
    t = 0.0
    for _ in range(steps):
        t += float(rng.integers(1, 4))
        v = pts[-1][1]
        pts += [(t, v), (t, v + float(rng.integers(1, 3)))]
    return Curve(pts, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
