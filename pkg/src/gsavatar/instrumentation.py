"""Counters proving the animation/serve paths never invoke the network."""

from __future__ import annotations

_network_invocations = 0


def count_network_invocation() -> None:
    global _network_invocations
    _network_invocations += 1


def network_invocations() -> int:
    return _network_invocations
