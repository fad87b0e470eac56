"""Bundled case fixtures."""
import json
from importlib import resources

from ..netmodel import GridCase, parse_case


def _read(name: str) -> str:
    return resources.files(__name__).joinpath(name).read_text(encoding="utf-8")


def case14_text() -> str:
    return _read("case14.json")


def load_case14() -> GridCase:
    """The IEEE 14-bus benchmark (MATPOWER data, 100 MVA base, in per unit)."""
    return parse_case(case14_text())


def case14_operating() -> dict:
    """Standard operating point: generator set-points and the published solution."""
    return json.loads(_read("case14_operating.json"))
