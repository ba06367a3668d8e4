from __future__ import annotations

import json
from functools import lru_cache
from pathlib import Path

import pytest

from sqdgen.hamiltonian import dense_fci_oracle
from sqdgen.integrals import parse_fcidump

DATA = Path(__file__).parent / "data"
REFERENCE = json.loads((DATA / "reference.json").read_text())


@lru_cache(maxsize=None)
def system(name: str):
    s = parse_fcidump(DATA / f"{name}.fcidump")
    return s, s.default_basis()


@lru_cache(maxsize=None)
def fci(name: str):
    s, basis = system(name)
    return dense_fci_oracle(basis, s)


@pytest.fixture(scope="session")
def reference():
    return REFERENCE


@pytest.fixture(scope="session")
def h2():
    return system("h2")


@pytest.fixture(scope="session")
def h4():
    return system("h4")


@pytest.fixture(scope="session")
def h2o():
    return system("h2o")
