import numpy as np
import pytest

from adahi.quantizer import CodebookSet


@pytest.fixture
def orthogonal_cb():
    """Three stages in mutually orthogonal axes of a 3-D latent space.

    Stage entries are distinct multiples along one axis, and each stage holds
    the zero vector, so greedy and exhaustive encoding agree on lattice points.
    """
    K = 4
    entries = np.zeros((3, K, 3))
    for stage, scale in enumerate((1.0, 0.3, 0.09)):
        entries[stage, :, stage] = scale * np.array([0.0, 1.0, -1.0, 2.0])
    rng = np.random.default_rng(5)
    W = np.eye(3) + 0.2 * rng.standard_normal((3, 3))
    c = 0.1 * rng.standard_normal(3)
    return CodebookSet(entries=entries, W=W, c=c, seed=5)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def criterion():
    def record(number: int, title: str, ok: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}" + (f"  [{detail}]" if detail else "")
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
