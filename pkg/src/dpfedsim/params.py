"""Flat parameter vectors with named segments.

Every aggregation, clipping and noising step works on the flat view; the
segment table only matters when a layer needs its own weight tensor back.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import StructureError


@dataclass(frozen=True)
class Layout:
    names: tuple[str, ...]
    shapes: tuple[tuple[int, ...], ...]

    def __post_init__(self):
        if len(set(self.names)) != len(self.names):
            raise StructureError(f"duplicate segment names in {self.names}")
        if len(self.names) != len(self.shapes):
            raise StructureError("names and shapes differ in length")
        for name, shape in zip(self.names, self.shapes):
            if not shape or any(d <= 0 for d in shape):
                raise StructureError(f"segment {name!r} has invalid shape {shape}", name)

    @property
    def sizes(self) -> tuple[int, ...]:
        return tuple(int(np.prod(s)) for s in self.shapes)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for n in self.sizes:
            out.append(acc)
            acc += n
        return tuple(out)

    @property
    def total_len(self) -> int:
        return sum(self.sizes)


class ParamVector:
    """Ordered ``(name, array)`` segments backed by one contiguous 1-D buffer."""

    __slots__ = ("layout", "flat")

    def __init__(self, layout: Layout, flat: np.ndarray):
        flat = np.asarray(flat)
        if flat.ndim != 1 or flat.shape[0] != layout.total_len:
            raise StructureError(
                f"flat buffer of length {flat.size} does not match layout of length {layout.total_len}"
            )
        self.layout = layout
        self.flat = flat

    @classmethod
    def from_segments(cls, segments: Iterable[tuple[str, np.ndarray]], dtype=None) -> "ParamVector":
        segments = [(name, np.asarray(arr)) for name, arr in segments]
        layout = Layout(tuple(n for n, _ in segments), tuple(a.shape for _, a in segments))
        if dtype is None:
            dtype = np.result_type(*[a.dtype for _, a in segments]) if segments else np.float64
        flat = np.concatenate([a.ravel() for _, a in segments]).astype(dtype, copy=False) if segments else np.zeros(0, dtype)
        return cls(layout, flat)

    @classmethod
    def zeros_like(cls, other: "ParamVector") -> "ParamVector":
        return cls(other.layout, np.zeros_like(other.flat))

    def __getitem__(self, name: str) -> np.ndarray:
        try:
            i = self.layout.names.index(name)
        except ValueError:
            raise KeyError(name) from None
        off = self.layout.offsets[i]
        return self.flat[off:off + self.layout.sizes[i]].reshape(self.layout.shapes[i])

    def segments(self) -> list[tuple[str, np.ndarray]]:
        return [(name, self[name]) for name in self.layout.names]

    @property
    def total_len(self) -> int:
        return self.layout.total_len

    @property
    def dtype(self):
        return self.flat.dtype

    def copy(self) -> "ParamVector":
        return ParamVector(self.layout, self.flat.copy())

    def norm(self) -> float:
        return float(np.linalg.norm(self.flat))

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.flat)))

    def check_compatible(self, other: "ParamVector") -> None:
        if self.layout == other.layout:
            return
        a, b = self.layout, other.layout
        for i in range(max(len(a.names), len(b.names))):
            left = (a.names[i], a.shapes[i]) if i < len(a.names) else None
            right = (b.names[i], b.shapes[i]) if i < len(b.names) else None
            if left != right:
                seg = (left or right)[0]
                raise StructureError(f"segment mismatch at {seg!r}: {left} vs {right}", seg)

    def _binary(self, other, op):
        if isinstance(other, ParamVector):
            self.check_compatible(other)
            return ParamVector(self.layout, op(self.flat, other.flat))
        return ParamVector(self.layout, op(self.flat, other))

    def __add__(self, other):
        return self._binary(other, np.add)

    def __sub__(self, other):
        return self._binary(other, np.subtract)

    def __mul__(self, scalar):
        return ParamVector(self.layout, self.flat * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        return ParamVector(self.layout, self.flat / scalar)

    def __eq__(self, other):
        if not isinstance(other, ParamVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.flat, other.flat)

    __hash__ = None

    def __repr__(self):
        return f"ParamVector({len(self.layout.names)} segments, {self.total_len} values, {self.flat.dtype})"


def flatten(v: ParamVector) -> tuple[Layout, np.ndarray]:
    return v.layout, v.flat.copy()


def unflatten(layout: Layout, flat: Sequence[float] | np.ndarray) -> ParamVector:
    return ParamVector(layout, np.array(flat, copy=True))
