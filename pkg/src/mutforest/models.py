"""Reference laws used by the tests, scripts and the command line."""
from __future__ import annotations

import json
from pathlib import Path

from .emergence import ChainModel, binary_fission_chain, validate
from .lattice import ProgenyLaw, law_from_lists


def diamond() -> ProgenyLaw:
    """Subcritical, primitive two-type law (rho ~ 0.873)."""
    return law_from_lists({(0, 0): .5, (2, 0): .3, (1, 1): .2},
                          {(0, 0): .6, (0, 2): .3, (1, 0): .1})


def triangle(rates=(1.0, 1.0)) -> ProgenyLaw:
    """Supercritical, primitive two-type law with m_11 = 1.4."""
    return law_from_lists({(2, 0): .6, (1, 1): .2, (0, 0): .2},
                          {(0, 2): .6, (1, 0): .1, (0, 0): .3}, rates=rates)


def critical_pair() -> ProgenyLaw:
    """Symmetric critical law: M = [[.5, .5], [.5, .5]]."""
    return law_from_lists({(0, 0): .75, (2, 2): .25}, {(0, 0): .75, (2, 2): .25})


BUILTIN = {"diamond": diamond, "triangle": triangle, "critical": critical_pair}


def load_model(source: str) -> ProgenyLaw:
    """A builtin name or a path to a JSON law."""
    if source in BUILTIN:
        return BUILTIN[source]()
    with Path(source).open() as fh:
        return ProgenyLaw.from_dict(json.load(fh))


def parse_pairs(text: str) -> list[tuple[float, float]]:
    """``"1,1;1,5"`` -> [(1, 1), (1, 5)]."""
    out = []
    for chunk in text.split(";"):
        a, b = (float(v) for v in chunk.split(","))
        out.append((a, b))
    return out


def load_chain(source: str) -> ChainModel:
    """``bf:1,1;1,5`` for a binary-fission chain, otherwise a JSON law with rates.

    JSON may carry ``"single_mutant": true``.
    """
    if source.startswith("bf:"):
        return binary_fission_chain(parse_pairs(source[3:]))
    with Path(source).open() as fh:
        doc = json.load(fh)
    return validate(ProgenyLaw.from_dict(doc), single_mutant=bool(doc.get("single_mutant", False)))
