"""Fault injection switches used by the validation harness.

Faults are process-global and off by default. They exist so that the
``validate`` suites can demonstrate that they catch real defects.
"""

from contextlib import contextmanager

KNOWN_FAULTS = frozenset({"christoffel_sign", "berezin_sign"})

_active: set[str] = set()


def enable(name: str) -> None:
    if name not in KNOWN_FAULTS:
        raise ValueError(f"unknown fault {name!r}; known: {sorted(KNOWN_FAULTS)}")
    _active.add(name)


def disable(name: str) -> None:
    _active.discard(name)


def active(name: str) -> bool:
    return name in _active


@contextmanager
def injected(name: str):
    enable(name)
    try:
        yield
    finally:
        disable(name)
