"""Set partitions, merge signatures and their enumeration.

Partitions are the states of a (non-spatial) coalescent: blocks only ever
merge.  Everything here is pure and hashable, so values can be shared
freely across threads and used as dictionary keys.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator


@dataclass(frozen=True)
class Partition:
    """A set partition of a finite set of positive-integer labels.

    Blocks are stored sorted by their minimum label, which fixes a
    deterministic iteration order used everywhere downstream.
    """

    blocks: tuple[frozenset[int], ...]

    def __init__(self, blocks: Iterable[Iterable[int]]):
        bs = [frozenset(b) for b in blocks]
        if any(not b for b in bs):
            raise ValueError("empty block")
        all_labels = [x for b in bs for x in b]
        if len(all_labels) != len(set(all_labels)):
            raise ValueError("blocks are not disjoint")
        if any(x < 1 for x in all_labels):
            raise ValueError("labels must be positive integers")
        object.__setattr__(self, "blocks", tuple(sorted(bs, key=min)))

    @classmethod
    def singletons(cls, labels: Iterable[int]) -> "Partition":
        return cls([{x} for x in labels])

    @property
    def ground_set(self) -> frozenset[int]:
        return frozenset(x for b in self.blocks for x in b)

    def __len__(self) -> int:
        return len(self.blocks)

    def __iter__(self) -> Iterator[frozenset[int]]:
        return iter(self.blocks)

    def __le__(self, other: "Partition") -> bool:
        """True if self is a refinement of other (other is coarser)."""
        if self.ground_set != other.ground_set:
            return False
        return all(any(b <= c for c in other.blocks) for b in self.blocks)

    def __lt__(self, other: "Partition") -> bool:
        return self != other and self <= other

    def restrict(self, labels: Iterable[int]) -> "Partition":
        keep = set(labels)
        new = [b & keep for b in self.blocks]
        return Partition([b for b in new if b])

    def merge(self, groups: Iterable[Iterable[frozenset[int]]]) -> "Partition":
        """Coarsen by merging each listed group of blocks into one block."""
        merged: list[frozenset[int]] = []
        used: set[frozenset[int]] = set()
        for g in groups:
            g = list(g)
            if len(g) < 2:
                raise ValueError("merge groups must contain at least two blocks")
            for b in g:
                if b in used or b not in self.blocks:
                    raise ValueError("invalid merge group")
                used.add(b)
            merged.append(frozenset().union(*g))
        rest = [b for b in self.blocks if b not in used]
        return Partition(merged + rest)


@dataclass(frozen=True)
class MergerSignature:
    """Label-invariant description of a coalescence event.

    ``n`` lineages are present, and ``m = len(ks)`` disjoint groups of sizes
    ``ks[0] >= ... >= ks[m-1] >= 2`` merge simultaneously.
    """

    n: int
    ks: tuple[int, ...]

    def __post_init__(self):
        if self.n < 2:
            raise ValueError("need at least two lineages")
        if not self.ks:
            raise ValueError("at least one merging group is required")
        if any(k < 2 for k in self.ks):
            raise ValueError("each merging group must have size >= 2")
        if sum(self.ks) > self.n:
            raise ValueError("merging groups exceed the number of lineages")
        if tuple(sorted(self.ks, reverse=True)) != self.ks:
            raise ValueError("ks must be non-increasing")

    @property
    def m(self) -> int:
        return len(self.ks)

    @property
    def n_after(self) -> int:
        return self.n - sum(self.ks) + self.m


def set_partitions(items: Iterable) -> Iterator[list[list]]:
    """All partitions of a finite collection of distinct items."""
    items = list(items)
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for smaller in set_partitions(rest):
        for i in range(len(smaller)):
            yield smaller[:i] + [[first] + smaller[i]] + smaller[i + 1 :]
        yield [[first]] + smaller


def enumerate_coarsenings(p: Partition) -> list[Partition]:
    """All partitions strictly coarser than ``p``, in canonical order.

    Each result is one admissible merge event, possibly with several
    simultaneous merging groups.
    """
    out = set()
    for grouping in set_partitions(list(p.blocks)):
        if all(len(g) == 1 for g in grouping):
            continue
        out.add(Partition([frozenset().union(*g) for g in grouping]))
    return sorted(out, key=lambda q: (len(q), [sorted(b) for b in q.blocks]))


def merger_signature(p: Partition, q: Partition) -> MergerSignature:
    """Signature of the transition from ``p`` to a strict coarsening ``q``."""
    if not p < q:
        raise ValueError("q is not a strict coarsening of p")
    ks = []
    for c in q.blocks:
        absorbed = [b for b in p.blocks if b <= c]
        if len(absorbed) >= 2:
            ks.append(len(absorbed))
    return MergerSignature(len(p), tuple(sorted(ks, reverse=True)))


def count_mergers(n: int, sig: MergerSignature) -> int:
    """Number of distinct coarsenings of an n-block partition with this signature."""
    if sig.n != n:
        raise ValueError("signature does not match n")
    s = n - sum(sig.ks)
    denom = math.prod(math.factorial(k) for k in sig.ks) * math.factorial(s)
    for _, grp in itertools.groupby(sig.ks):
        denom *= math.factorial(len(list(grp)))
    return math.factorial(n) // denom


def signatures_for(n: int) -> list[MergerSignature]:
    """All merger signatures with ``sig.n == n``."""

    def rec(remaining: int, max_k: int) -> Iterator[tuple[int, ...]]:
        yield ()
        for k in range(min(remaining, max_k), 1, -1):
            for tail in rec(remaining - k, k):
                yield (k,) + tail

    return [MergerSignature(n, ks) for ks in rec(n, n) if ks]


@lru_cache(maxsize=None)
def bell_number(n: int) -> int:
    if n == 0:
        return 1
    return sum(math.comb(n - 1, k) * bell_number(k) for k in range(n))
