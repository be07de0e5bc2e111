"""Counter-based random number streams.

A stream is fully identified by ``(seed, stream_id, position)``: the same
triple always produces the same values, on any machine. Every experiment
component (data split, weight init, training noise, per-sample attack noise)
gets its own stream, so adding draws in one component never shifts another.

Draws are backed by a Philox generator keyed on the triple; ``position``
advances by the number of values drawn, so re-creating a stream and replaying
the same sequence of calls reproduces the same outputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_MASK64 = (1 << 64) - 1
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3


def _mix64(*parts: int | str) -> int:
    """FNV-1a hash of the parts, used to derive child stream ids."""
    h = _FNV_OFFSET
    for part in parts:
        data = part.encode("utf-8") if isinstance(part, str) else int(part).to_bytes(8, "little", signed=False)
        for b in data:
            h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


@dataclass
class RngStream:
    """A reproducible stream of random values.

    Attributes:
        seed: experiment-level seed (64-bit unsigned).
        stream_id: component-level id (64-bit unsigned).
        position: counter advanced by every draw.
    """

    seed: int
    stream_id: int = 0
    position: int = 0

    def _generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence((self.seed & _MASK64, self.stream_id & _MASK64, self.position & _MASK64))
        return np.random.Generator(np.random.Philox(ss))

    def _advance(self, n: int) -> None:
        self.position = (self.position + int(n)) & _MASK64

    def normal(self, shape: tuple[int, ...] | int = ()) -> np.ndarray:
        """Draw i.i.d. standard-normal float32 values."""
        g = self._generator()
        out = g.standard_normal(size=shape, dtype=np.float32)
        self._advance(int(np.prod(shape)) if shape != () else 1)
        return out

    def integers(self, low: int, high: int, size: int | tuple[int, ...] = ()) -> np.ndarray:
        """Draw uniform integers in [low, high)."""
        g = self._generator()
        out = g.integers(low, high, size=size)
        self._advance(out.size if isinstance(out, np.ndarray) else 1)
        return out

    def permutation(self, n: int) -> np.ndarray:
        """A random permutation of range(n)."""
        g = self._generator()
        out = g.permutation(n)
        self._advance(n)
        return out

    def generator(self) -> np.random.Generator:
        """The generator keyed on the current (seed, stream_id, position).

        For callers that need draw kinds this class does not wrap (uniforms,
        choices). Consuming it does not advance ``position``; treat the
        stream as fully spent afterwards or split a child first.
        """
        return self._generator()

    def split(self, *tags: int | str) -> "RngStream":
        """Derive an independent child stream; same tags -> same child.

        The child's id depends only on this stream's id and the tags, never
        on ``position``, so child identity is stable regardless of how much
        the parent has been consumed.
        """
        return RngStream(self.seed, _mix64(self.stream_id, *tags), 0)

    def copy(self) -> "RngStream":
        return RngStream(self.seed, self.stream_id, self.position)
