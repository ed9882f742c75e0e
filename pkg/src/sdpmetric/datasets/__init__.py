"""Small UCI benchmark sets bundled as CSV (label in the last column).

``wine`` is the UCI Wine data (178 x 13, 3 classes). ``balance`` is the UCI
Balance Scale data, which is the complete 5^4 grid of weights and
distances labelled by which side tips (625 x 4, 3 classes).
``breast_cancer`` is the original Wisconsin breast cancer data with the 16
incomplete rows removed (683 x 9, 2 classes).
"""
from __future__ import annotations

from importlib import resources

from ..data import Dataset, load_dense

BUILTIN = ("wine", "balance", "breast_cancer")


def builtin_path(name):
    if name not in BUILTIN:
        raise ValueError(f"unknown built-in dataset {name!r}; available: {', '.join(BUILTIN)}")
    return resources.files(__package__).joinpath("data", f"{name}.csv")


def load_builtin(name) -> Dataset:
    with resources.as_file(builtin_path(name)) as p:
        return load_dense(p, label_column=-1, header=True, name=name)
