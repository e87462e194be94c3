"""Versioned prompt templates.

Each template is a text asset rendered with :meth:`str.format`, so literal
braces appear doubled in the files. ``checksums.json`` pins the sha256 of
every asset; :func:`load` refuses a template whose bytes drifted.
"""

from __future__ import annotations

import hashlib
import json
from functools import lru_cache
from importlib import resources

TEMPLATE_NAMES = (
    "plan_system",
    "plan_user",
    "replan_system",
    "replan_user",
    "preunderstand_system",
    "preunderstand_user",
    "observe_system",
    "observe_user",
)

NO_REPLAN_SENTINEL = "No need to replan."


class TemplateDrift(RuntimeError):
    pass


def _read_bytes(filename: str) -> bytes:
    return resources.files(__name__).joinpath(filename).read_bytes()


@lru_cache(maxsize=None)
def checksums() -> dict[str, str]:
    return json.loads(_read_bytes("checksums.json"))


def digest(name: str) -> str:
    return hashlib.sha256(_read_bytes(f"{name}.txt")).hexdigest()


def verify_all() -> None:
    for name in TEMPLATE_NAMES:
        load(name)


@lru_cache(maxsize=None)
def load(name: str) -> str:
    """Template text without the file's trailing newline."""
    if name not in TEMPLATE_NAMES:
        raise KeyError(name)
    expected = checksums().get(f"{name}.txt")
    actual = digest(name)
    if expected != actual:
        raise TemplateDrift(f"{name}.txt checksum {actual} != pinned {expected}")
    return _read_bytes(f"{name}.txt").decode("utf-8").removesuffix("\n")


def render(name: str, **values: str) -> str:
    return load(name).format(**values)
