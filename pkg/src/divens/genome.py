"""Architecture genomes: search-space bounds, encoding, and mutation.

A genome describes one residual-MLP classifier as a joint-training flag,
a first-layer width, and a variable-length list of (block width, dropout)
pairs. Fixed-length normalized vectors derived from a genome are the
inputs to the distance surrogate; the architectural vector drops the
joint-training flag.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np


class BoundsError(ValueError):
    """Search-space bounds violate their invariants."""


class GenomeError(ValueError):
    """Genome violates the search-space bounds."""


@dataclass(frozen=True)
class SearchSpaceBounds:
    """Ranges for block count, widths and dropout probabilities.

    Width bounds are inclusive integer ranges; dropout bounds are an
    inclusive real range inside [0, 1). ``r_max`` fixes the padded
    representation length.
    """

    r_min: int
    r_max: int
    c_min: int
    c_max: int
    o_min: int
    o_max: int
    d_min: float
    d_max: float

    def __post_init__(self):
        if self.r_min < 1:
            raise BoundsError(f"r_min must be >= 1, got {self.r_min}")
        if self.r_min > self.r_max:
            raise BoundsError(f"r_min {self.r_min} > r_max {self.r_max}")
        if not self.c_min < self.c_max:
            raise BoundsError(f"need c_min < c_max, got [{self.c_min}, {self.c_max}]")
        if not self.o_min < self.o_max:
            raise BoundsError(f"need o_min < o_max, got [{self.o_min}, {self.o_max}]")
        if not (0.0 <= self.d_min < self.d_max < 1.0):
            raise BoundsError(
                f"need 0 <= d_min < d_max < 1, got [{self.d_min}, {self.d_max}]"
            )

    @property
    def rep_length(self) -> int:
        """Length of the padded normalized representation, 2 + 2*r_max."""
        return 2 + 2 * self.r_max


@dataclass(frozen=True)
class Genome:
    """One architecture: joint flag, first-layer width, (width, dropout) blocks."""

    j: bool
    c: int
    blocks: tuple[tuple[int, float], ...]

    @property
    def r(self) -> int:
        return len(self.blocks)

    def to_record(self) -> dict:
        return {
            "j": int(self.j),
            "c": int(self.c),
            "blocks": [[int(o), float(d)] for o, d in self.blocks],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_record(), sort_keys=True, separators=(",", ":"))

    @staticmethod
    def from_record(record: dict) -> "Genome":
        blocks = tuple((int(o), float(d)) for o, d in record["blocks"])
        return Genome(j=bool(record["j"]), c=int(record["c"]), blocks=blocks)

    @staticmethod
    def from_json(text: str) -> "Genome":
        return Genome.from_record(json.loads(text))

    def digest(self) -> int:
        """Stable integer fingerprint of the genome content, for seed streams."""
        h = hashlib.sha256(self.to_json().encode("utf-8")).digest()
        return int.from_bytes(h[:16], "little")


def validate_genome(g: Genome, bounds: SearchSpaceBounds) -> None:
    """Raise GenomeError unless ``g`` lies inside ``bounds``."""
    if not bounds.r_min <= g.r <= bounds.r_max:
        raise GenomeError(f"block count {g.r} outside [{bounds.r_min}, {bounds.r_max}]")
    if not bounds.c_min <= g.c <= bounds.c_max:
        raise GenomeError(f"first-layer width {g.c} outside bounds")
    for i, (o, d) in enumerate(g.blocks):
        if not bounds.o_min <= o <= bounds.o_max:
            raise GenomeError(f"block {i} width {o} outside bounds")
        if not bounds.d_min <= d <= bounds.d_max:
            raise GenomeError(f"block {i} dropout {d} outside bounds")


def random_genome(bounds: SearchSpaceBounds, rng: np.random.Generator) -> Genome:
    """Draw a genome uniformly from the search space.

    Block count and widths are uniform over integers (inclusive ranges),
    dropout is uniform over reals, and the joint flag is a fair coin.
    """
    r = int(rng.integers(bounds.r_min, bounds.r_max + 1))
    j = bool(rng.integers(0, 2))
    c = int(rng.integers(bounds.c_min, bounds.c_max + 1))
    blocks = tuple(
        (
            int(rng.integers(bounds.o_min, bounds.o_max + 1)),
            float(rng.uniform(bounds.d_min, bounds.d_max)),
        )
        for _ in range(r)
    )
    return Genome(j=j, c=c, blocks=blocks)


def normalize(g: Genome, bounds: SearchSpaceBounds) -> np.ndarray:
    """Fixed-length vector in [0,1]: flag, scaled width, padded block entries.

    Layout: [j, c_scaled, 0 x (R-r), o_scaled..., 0 x (R-r), d_scaled...],
    with the zero padding placed before each varying sequence.
    """
    pad = bounds.r_max - g.r
    out = np.zeros(bounds.rep_length, dtype=np.float64)
    out[0] = 1.0 if g.j else 0.0
    out[1] = (g.c - bounds.c_min) / (bounds.c_max - bounds.c_min)
    o_start = 2 + pad
    d_start = 2 + bounds.r_max + pad
    for i, (o, d) in enumerate(g.blocks):
        out[o_start + i] = (o - bounds.o_min) / (bounds.o_max - bounds.o_min)
        out[d_start + i] = (d - bounds.d_min) / (bounds.d_max - bounds.d_min)
    return out


def arch_rep(norm: np.ndarray) -> np.ndarray:
    """Architectural vector: the normalized vector without the joint flag."""
    return np.asarray(norm, dtype=np.float64)[1:]


_MUTATION_KINDS = ("add", "remove", "reparameterize", "swap")


def mutate(g: Genome, bounds: SearchSpaceBounds, rng: np.random.Generator) -> Genome:
    """Apply one structural mutation, drawn uniformly among the feasible kinds.

    Add inserts a fresh block at a random position, remove deletes a random
    block, reparameterize redraws one block's width and dropout, and swap
    exchanges two consecutive blocks. Kinds infeasible at the current block
    count (add at r_max, remove at r_min, swap with a single block) are
    excluded before the draw, so exactly one mutation is always applied.
    """
    feasible = ["reparameterize"]
    if g.r < bounds.r_max:
        feasible.append("add")
    if g.r > bounds.r_min:
        feasible.append("remove")
    if g.r >= 2:
        feasible.append("swap")
    feasible.sort(key=_MUTATION_KINDS.index)
    kind = feasible[int(rng.integers(0, len(feasible)))]

    blocks = list(g.blocks)
    if kind == "add":
        pos = int(rng.integers(0, g.r + 1))
        new_block = (
            int(rng.integers(bounds.o_min, bounds.o_max + 1)),
            float(rng.uniform(bounds.d_min, bounds.d_max)),
        )
        blocks.insert(pos, new_block)
    elif kind == "remove":
        pos = int(rng.integers(0, g.r))
        del blocks[pos]
    elif kind == "reparameterize":
        pos = int(rng.integers(0, g.r))
        blocks[pos] = (
            int(rng.integers(bounds.o_min, bounds.o_max + 1)),
            float(rng.uniform(bounds.d_min, bounds.d_max)),
        )
    else:  # swap
        pos = int(rng.integers(0, g.r - 1))
        blocks[pos], blocks[pos + 1] = blocks[pos + 1], blocks[pos]
    return Genome(j=g.j, c=g.c, blocks=tuple(blocks))


@dataclass(frozen=True)
class MlpPlan:
    """Concrete layer plan for one genome: projection width plus blocks."""

    input_width: int
    blocks: tuple[tuple[int, float], ...]


def genome_to_config(g: Genome) -> MlpPlan:
    """Deterministic mapping from a genome to its residual-MLP layer plan."""
    return MlpPlan(input_width=g.c, blocks=g.blocks)
