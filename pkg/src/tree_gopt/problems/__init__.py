"""Bundled benchmark problems.

Two runnable cases ship as JSON problem files: ``demo`` (a small
mixed-integer problem with two logarithmic inequalities) and
``speed_reducer`` (a 7-variable gearbox design problem with 11 nonlinear
inequalities).  ``minlplib_stubs.json`` records library benchmark ids and
best-known objectives only — no constraint definitions — so those cases are
not runnable from this package.
"""

import json
from importlib import resources

from ..exceptions import InputError

__all__ = ["bundled_names", "bundled_path", "load_bundled"]


def _data_root():
    return resources.files(__name__)


def bundled_names():
    """Sorted ids of the runnable bundled problems."""
    return sorted(
        path.name[: -len(".json")]
        for path in _data_root().iterdir()
        if path.name.endswith(".json") and path.name != "minlplib_stubs.json"
    )


def bundled_path(name):
    """Filesystem path of a bundled problem file.

    Accepts ``"demo"`` or ``"demo.json"``.  Raises InputError for unknown
    names, listing what is available.
    """
    stem = name[: -len(".json")] if name.endswith(".json") else name
    candidate = _data_root() / f"{stem}.json"
    if not candidate.is_file():
        known = ", ".join(bundled_names())
        raise InputError(f"no bundled problem {name!r} (available: {known})")
    return candidate


def load_bundled(name):
    """Parsed JSON dict of a bundled problem (not yet standardized)."""
    with bundled_path(name).open("r", encoding="utf-8") as handle:
        return json.load(handle)
