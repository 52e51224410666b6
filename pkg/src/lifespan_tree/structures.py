"""Canonical structure manifest (one name per line, 124 lines)."""

from importlib import resources
from pathlib import Path

N_STRUCTURES = 124


def read_manifest(path=None):
    """Read a structure manifest; the packaged one when ``path`` is None."""
    if path is None:
        text = resources.files("lifespan_tree").joinpath("data/structures.txt").read_text("utf-8")
    else:
        text = Path(path).read_text(encoding="utf-8")
    names = [line.strip() for line in text.splitlines() if line.strip()]
    if len(set(names)) != len(names):
        raise ValueError("structure manifest contains duplicate names")
    return names


def default_structures():
    return read_manifest()
