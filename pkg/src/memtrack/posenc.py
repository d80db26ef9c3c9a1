"""Temporal positional-encoding tables and memory-capacity expansion.

The source model ships exactly seven temporal position embeddings. To index a
larger memory without retraining, the table is resampled to M slots. Two
schemes are provided:

* ``piecewise`` keeps the boundary embeddings fixed (slot 0 stays the first
  entry, slot M-1 the last) and linearly resamples only the interior entries
  1..5 onto the remaining M-2 slots, so slot 1 reproduces entry 1 and slot
  M-2 reproduces entry 5 for every M.
* ``uniform`` spreads all M slots evenly over the whole 0..6 range.

Entries are treated as opaque vectors; nothing here assumes sinusoidal
structure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

BASE_SIZE = 7
_INTERIOR_LAST = 5  # highest index touched by piecewise interior resampling


@dataclass(frozen=True, eq=False)
class EncodingTable:
    """Ordered list of equal-length encoding vectors, stored as an (n, dim) array."""

    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = np.asarray(self.entries, dtype=np.float64)
        if entries.ndim != 2 or entries.shape[0] < 2:
            raise ValueError(f"expected an (n>=2, dim) table, got shape {entries.shape}")
        if not np.isfinite(entries).all():
            raise ValueError("encoding table contains non-finite values")
        object.__setattr__(self, "entries", entries)

    def __len__(self) -> int:
        return self.entries.shape[0]

    @property
    def dim(self) -> int:
        return self.entries.shape[1]


def piecewise_coefficients(m: int) -> list[tuple[int, int, float]]:
    """Per-slot (low index, high index, blend weight) for boundary-preserving expansion.

    Slot k blends base entries ``(1-alpha)*p[low] + alpha*p[high]``. Slots 0
    and m-1 are pinned to entries 0 and 6; interior slots resample entries
    1..5 at u = 1 + 4*(k-1)/(m-3).
    """
    _check_target(m)
    coeffs: list[tuple[int, int, float]] = [(0, 0, 0.0)]
    for k in range(1, m - 1):
        t = (k - 1) / (m - 3)
        u = 1.0 + 4.0 * t
        low = min(int(math.floor(u)), _INTERIOR_LAST)
        alpha = u - low
        high = low if alpha == 0.0 else min(low + 1, _INTERIOR_LAST)
        coeffs.append((low, high, alpha))
    coeffs.append((BASE_SIZE - 1, BASE_SIZE - 1, 0.0))
    return coeffs


def uniform_coefficients(m: int) -> list[tuple[int, int, float]]:
    """Per-slot blend coefficients for evenly spaced resampling over the full range."""
    _check_target(m)
    coeffs: list[tuple[int, int, float]] = []
    for k in range(m):
        u = 6.0 * k / (m - 1)
        low = min(int(math.floor(u)), BASE_SIZE - 1)
        alpha = u - low
        high = low if alpha == 0.0 else min(low + 1, BASE_SIZE - 1)
        coeffs.append((low, high, alpha))
    return coeffs


def expand_piecewise(base: EncodingTable, m: int) -> EncodingTable:
    """Expand a 7-entry table to m slots, preserving the boundary segments."""
    _check_base(base)
    return _apply(base, piecewise_coefficients(m))


def expand_uniform(base: EncodingTable, m: int) -> EncodingTable:
    """Expand a 7-entry table to m slots with uniform spacing (ablation variant)."""
    _check_base(base)
    return _apply(base, uniform_coefficients(m))


def reference_base_table(dim: int = 16) -> EncodingTable:
    """Deterministic synthetic 7-entry table used when no real weights are loaded."""
    idx = np.arange(BASE_SIZE, dtype=np.float64)[:, None]
    chan = np.arange(dim, dtype=np.float64)[None, :]
    values = np.sin(0.37 * idx * (chan + 1.0)) + 0.05 * chan * np.cos(0.11 * idx)
    return EncodingTable(values)


def _apply(base: EncodingTable, coeffs: list[tuple[int, int, float]]) -> EncodingTable:
    out = np.empty((len(coeffs), base.dim), dtype=np.float64)
    for k, (low, high, alpha) in enumerate(coeffs):
        if alpha == 0.0:
            out[k] = base.entries[low]  # exact copy keeps pinned slots bit-identical
        else:
            out[k] = (1.0 - alpha) * base.entries[low] + alpha * base.entries[high]
    return EncodingTable(out)


def _check_base(base: EncodingTable) -> None:
    if len(base) != BASE_SIZE:
        raise ValueError(f"expansion requires a {BASE_SIZE}-entry base table, got {len(base)}")


def _check_target(m: int) -> None:
    if m < BASE_SIZE:
        raise ValueError(f"target size must be >= {BASE_SIZE}, got {m}")
