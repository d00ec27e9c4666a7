import sys

import numpy as np
import pytest
from hypothesis import strategies as st

from mutforest import rng as rngmod
from mutforest.lattice import ProgenyLaw, SparsePmf
from mutforest.models import critical_pair, diamond, triangle


@pytest.fixture(scope="session")
def nu_diamond():
    return diamond()


@pytest.fixture(scope="session")
def nu_triangle():
    return triangle()


@pytest.fixture(scope="session")
def nu_critical():
    return critical_pair()


@pytest.fixture
def gen():
    return rngmod.generator(12345, "tests")


@st.composite
def pmfs(draw, d, max_support=4, max_child=3, forbid=None):
    keys = draw(st.lists(st.tuples(*[st.integers(0, max_child)] * d),
                         min_size=1, max_size=max_support, unique=True))
    if forbid is not None:
        keys = [k for k in keys if k != forbid] or [tuple(0 for _ in range(d))]
    w = draw(st.lists(st.integers(1, 20), min_size=len(keys), max_size=len(keys)))
    tot = sum(w)
    return SparsePmf(d, {k: wi / tot for k, wi in zip(keys, w)})


@st.composite
def laws(draw, d=None, max_child=3, ct_ready=False):
    d = d or draw(st.integers(1, 3))
    out = []
    for i in range(d):
        e = tuple(1 if j == i else 0 for j in range(d))
        out.append(draw(pmfs(d, max_child=max_child, forbid=e if ct_ready else None)))
    return ProgenyLaw(tuple(out))


@st.composite
def subcritical_laws(draw, d=None):
    """Random laws scaled into the subcritical regime by mixing with extinction."""
    nu = draw(laws(d=d))
    rho = max(abs(np.linalg.eigvals(nu.mean_matrix())))
    s = draw(st.floats(0.2, 0.9))
    keep = min(1.0, s / rho) if rho > 0 else 1.0
    zero = (0,) * nu.dim
    new = []
    for law in nu.laws:
        ent = {k: p * keep for k, p in law.entries.items()}
        ent[zero] = ent.get(zero, 0.0) + (1 - keep)
        tot = sum(ent.values())
        new.append(SparsePmf(nu.dim, {k: v / tot for k, v in ent.items()}))
    return ProgenyLaw(tuple(new))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not getattr(mod, "RESULTS", None):
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.RESULTS:
        terminalreporter.write_line(line)
