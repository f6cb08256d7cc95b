import itertools

import numpy as np
import pytest
import torch

from ccsd.complex import ComplexTensor, DimConstraints


def random_graph(rng: np.random.Generator, n: int, p: float = 0.5) -> np.ndarray:
    upper = np.triu(rng.random((n, n)) < p, 1)
    return (upper | upper.T).astype(float)


def random_complex(rng: np.random.Generator, n: int, constraints=DimConstraints(3, 4),
                   f0: int = 2, f1: int = 1, f2: int = 1, cell_prob: float = 0.3,
                   binary_cells: bool = False) -> ComplexTensor:
    """Random featured complex: any node subset in range may be a cell (no support rule)."""
    X = rng.normal(size=(n, f0))
    A = np.zeros((n, n, f1))
    for i, j in itertools.combinations(range(n), 2):
        if rng.random() < 0.5:
            A[i, j] = A[j, i] = rng.integers(1, 4, size=f1)
    cells = {}
    for k in constraints.sizes:
        for s in itertools.combinations(range(n), k):
            if rng.random() < cell_prob:
                vals = np.ones(f2) if binary_cells else rng.integers(1, 4, size=f2)
                cells[s] = tuple(float(v) for v in vals)
    return ComplexTensor.from_cells(X, A, cells, constraints, f2=f2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tgen():
    g = torch.Generator()
    g.manual_seed(1234)
    return g


# acceptance verdicts, printed as one PASS/FAIL line each at the end of the session
_VERDICTS: list = []


@pytest.fixture
def verdict():
    """``verdict(name, fn)``: run ``fn() -> (ok, detail)``; exceptions count as FAIL."""
    def record(name, fn):
        try:
            ok, detail = fn()
        except Exception as exc:  # noqa: BLE001 - reported, then re-raised through the assert
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        _VERDICTS.append((name, bool(ok), detail))
        assert ok, f"{name}: {detail}"
    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _VERDICTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}  ({detail})")
