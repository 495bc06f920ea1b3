import numpy as np
import pytest

ACCEPTANCE_LINES: list[str] = []


def fock_ladder(levels: int) -> np.ndarray:
    """Single-mode annihilator truncated to ``levels`` Fock states."""
    return np.diag(np.sqrt(np.arange(1, levels, dtype=float)), 1).astype(complex)


class TwoModeFock:
    """Brute-force two-mode Fock matrices, independent of the package."""

    def __init__(self, levels: int):
        self.levels = levels
        a = fock_ladder(levels)
        eye = np.eye(levels)
        self.a1 = np.kron(a, eye)
        self.a2 = np.kron(eye, a)

    def index(self, n1: int, n2: int) -> int:
        return n1 * self.levels + n2

    def monomial(self, exps) -> np.ndarray:
        i, j, k, l = exps
        mp = np.linalg.matrix_power
        return (mp(self.a1.conj().T, i) @ mp(self.a2.conj().T, j)
                @ mp(self.a1, k) @ mp(self.a2, l))

    def expansion(self, op) -> np.ndarray:
        out = np.zeros((self.levels ** 2,) * 2, dtype=complex)
        for exps, c in op.terms.items():
            out += c * self.monomial(exps)
        return out

    def restrict(self, mat: np.ndarray, basis) -> np.ndarray:
        idx = [self.index(*s.fock) for s in basis.states]
        return mat[np.ix_(idx, idx)]


@pytest.fixture(scope="session")
def fock12():
    return TwoModeFock(12)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
