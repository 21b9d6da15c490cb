"""Allocation accounting for dynamic-programming buffers.

The memory numbers reported by the benchmark commands are *tracked algorithmic
allocations* — ring buffers, checkpoints, gradient workspaces, alpha
histories, backpointer tables, edge tensors — not process RSS. RSS depends on
the allocator and the interpreter; the tracked totals are comparable across
machines and directly test the advertised memory behaviour (constant-size
rings, square-root checkpoint growth).

Backends accept an optional :class:`MemoryLedger` and record every persistent
DP buffer they allocate, tagged by role. Scratch temporaries that live for a
single position update are deliberately not tracked.
"""

from __future__ import annotations

from collections import OrderedDict

import numpy as np


class MemoryLedger:
    """Tagged byte counts for DP buffers allocated during one solver call."""

    def __init__(self) -> None:
        self._bytes: OrderedDict[str, int] = OrderedDict()

    def record(self, tag: str, obj: np.ndarray | int) -> None:
        nbytes = obj.nbytes if isinstance(obj, np.ndarray) else int(obj)
        self._bytes[tag] = self._bytes.get(tag, 0) + nbytes

    def bytes_for(self, tag: str) -> int:
        return self._bytes.get(tag, 0)

    def total(self) -> int:
        return sum(self._bytes.values())

    def as_dict(self) -> dict[str, int]:
        return dict(self._bytes)

    def __repr__(self) -> str:  # pragma: no cover - debugging aid
        parts = ", ".join(f"{k}={v}" for k, v in self._bytes.items())
        return f"MemoryLedger({parts}, total={self.total()})"
