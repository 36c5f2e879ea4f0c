"""Named parameter store with per-tensor prunability flags and binary masks."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Param:
    value: np.ndarray          # float64, C-contiguous
    prunable: bool
    mask: np.ndarray = field(default=None)  # bool, True = keep

    def __post_init__(self):
        self.value = np.ascontiguousarray(self.value, dtype=np.float64)
        if self.mask is None:
            self.mask = np.ones(self.value.shape, dtype=bool)
        else:
            self.mask = np.asarray(self.mask, dtype=bool)
        if self.mask.shape != self.value.shape:
            raise ValueError(
                f"mask shape {self.mask.shape} != value shape {self.value.shape}")


class ParamStore:
    """Ordered map name -> Param. Iteration order is insertion order, which
    fixes the deterministic coordinate order used for scores and checkpoints.

    Invariants maintained by the pruning engine:
      * masked coordinates hold exactly 0 after every prune event and after
        every optimizer step that follows one;
      * non-prunable tensors keep all-ones masks forever.
    """

    def __init__(self):
        self._params: dict[str, Param] = {}

    def add(self, name: str, value, prunable: bool = False) -> Param:
        if name in self._params:
            raise ValueError(f"duplicate parameter name {name!r}")
        p = Param(np.array(value, dtype=np.float64), prunable)
        self._params[name] = p
        return p

    def __getitem__(self, name: str) -> Param:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def prunable_names(self) -> list[str]:
        return [n for n, p in self._params.items() if p.prunable]

    def num_prunable(self) -> int:
        return sum(p.value.size for p in self._params.values() if p.prunable)

    def apply_masks(self) -> None:
        """Zero every masked coordinate in place."""
        for p in self._params.values():
            if p.prunable:
                p.value[~p.mask] = 0.0

    def sparsity(self) -> float:
        """Fraction of prunable coordinates currently masked out."""
        total = 0
        zeroed = 0
        for p in self._params.values():
            if p.prunable:
                total += p.mask.size
                zeroed += int(p.mask.size - p.mask.sum())
        return zeroed / total if total else 0.0

    def zeroed_count(self) -> int:
        return sum(int(p.mask.size - p.mask.sum())
                   for p in self._params.values() if p.prunable)

    def clone(self) -> "ParamStore":
        out = ParamStore()
        for name, p in self._params.items():
            q = out.add(name, p.value.copy(), p.prunable)
            q.mask = p.mask.copy()
        return out
