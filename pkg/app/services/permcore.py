"""Permutation encoding for the permutation-level noising operation.

Orderings are handled as position lists: entry k is the index (into the
base item list) of the item shown at output position k. Permutations of
``{0..l_o-1}`` are ranked lexicographically through their Lehmer code.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Sequence

from app.core.errors import CapacityError, IndexRangeError, InvalidArgumentError, InvalidPermutationError

MAX_OUTPUT_LENGTH = 8


@dataclass(frozen=True)
class SequenceSpec:
    l_s: int
    l_o: int

    def __post_init__(self):
        if self.l_o < 1 or self.l_s < self.l_o:
            raise InvalidArgumentError(f"need 1 <= l_o <= l_s, got l_o={self.l_o} l_s={self.l_s}")
        if self.l_o > MAX_OUTPUT_LENGTH:
            raise CapacityError(f"l_o={self.l_o} exceeds the cap of {MAX_OUTPUT_LENGTH}")

    @property
    def n_permutations(self) -> int:
        return math.factorial(self.l_o)


@dataclass(frozen=True)
class ItemSequence:
    positions: tuple[int, ...]
    base_items: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "positions", tuple(int(p) for p in self.positions))
        object.__setattr__(self, "base_items", tuple(int(i) for i in self.base_items))
        n = len(self.base_items)
        for p in self.positions:
            if not 0 <= p < n:
                raise InvalidArgumentError(f"position {p} outside base list of length {n}")

    @classmethod
    def from_items(cls, items: Sequence[int], base_items: Sequence[int] | None = None) -> "ItemSequence":
        base = tuple(items) if base_items is None else tuple(base_items)
        index = {item: k for k, item in enumerate(base)}
        try:
            return cls(tuple(index[item] for item in items), base)
        except KeyError as e:
            raise InvalidArgumentError(f"item {e.args[0]} is not in the base list")

    @property
    def items(self) -> tuple[int, ...]:
        return tuple(self.base_items[p] for p in self.positions)

    @property
    def l_o(self) -> int:
        return len(self.positions)

    @property
    def is_permutation(self) -> bool:
        return sorted(self.positions) == list(range(self.l_o))

    @property
    def rank_index(self) -> int | None:
        return rank(self.positions) if self.is_permutation else None

    @property
    def has_duplicates(self) -> bool:
        return len(set(self.positions)) != len(self.positions)

    def with_positions(self, positions: Sequence[int]) -> "ItemSequence":
        return ItemSequence(tuple(positions), self.base_items)


def _check_permutation(perm: Sequence[int]) -> list[int]:
    values = [int(p) for p in perm]
    if sorted(values) != list(range(len(values))):
        raise InvalidPermutationError(f"{list(perm)} is not a permutation of 0..{len(values) - 1}")
    return values


def factorial_count(l_o: int) -> int:
    return math.factorial(l_o)


def rank(perm: Sequence[int]) -> int:
    values = _check_permutation(perm)
    n = len(values)
    available = list(range(n))
    result = 0
    for i, elem in enumerate(values):
        idx = available.index(elem)
        result += idx * math.factorial(n - 1 - i)
        available.pop(idx)
    return result


def unrank(index: int, l_o: int) -> list[int]:
    if l_o < 1:
        raise InvalidArgumentError(f"l_o must be positive, got {l_o}")
    total = math.factorial(l_o)
    if not 0 <= index < total:
        raise IndexRangeError(f"index {index} outside [0, {total})")
    pool = list(range(l_o))
    result = []
    for i in range(l_o):
        digit, index = divmod(index, math.factorial(l_o - 1 - i))
        result.append(pool.pop(digit))
    return result


@lru_cache(maxsize=None)
def all_permutations(l_o: int) -> tuple[tuple[int, ...], ...]:
    """Every permutation of 0..l_o-1, position i holding the one of rank i."""
    if l_o > MAX_OUTPUT_LENGTH:
        raise CapacityError(f"l_o={l_o} exceeds the cap of {MAX_OUTPUT_LENGTH}")
    return tuple(itertools.permutations(range(l_o)))


def seq_distance(a: Sequence[int], b: Sequence[int]) -> int:
    if len(a) != len(b):
        raise InvalidArgumentError(f"length mismatch: {len(a)} vs {len(b)}")
    return sum(1 for x, y in zip(a, b) if x != y)


def swap_neighbors(perm: Sequence[int]) -> list[list[int]]:
    values = _check_permutation(perm)
    neighbors = []
    for i, j in itertools.combinations(range(len(values)), 2):
        swapped = list(values)
        swapped[i], swapped[j] = swapped[j], swapped[i]
        neighbors.append(swapped)
    return neighbors

