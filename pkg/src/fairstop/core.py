"""Instance model: discrete value distributions, arrival orders and exact moments."""

from __future__ import annotations

import bisect
import itertools
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Iterator, Mapping, Sequence

import numpy as np

MASS_TOL = 1e-9
JSON_MASS_TOL = 1e-6


@dataclass(frozen=True)
class DiscreteDistribution:
    """Finite-support distribution of one candidate's value."""

    points: tuple[float, ...]
    masses: tuple[float, ...]

    def __post_init__(self) -> None:
        points = tuple(float(x) for x in self.points)
        masses = tuple(float(m) for m in self.masses)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "masses", masses)
        if not points:
            raise ValueError("distribution needs at least one support point")
        if len(points) != len(masses):
            raise ValueError("points and masses differ in length")
        if any(not math.isfinite(x) or x < 0 for x in points):
            raise ValueError(f"support points must be finite and non-negative: {points}")
        if any(b <= a for a, b in zip(points, points[1:])):
            raise ValueError(f"support points must be strictly increasing: {points}")
        if any(not (0 < m <= 1) for m in masses):
            raise ValueError(f"masses must lie in (0, 1]: {masses}")
        if abs(math.fsum(masses) - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {math.fsum(masses)!r}, not 1")

    @classmethod
    def from_mapping(cls, table: Mapping[float, float]) -> DiscreteDistribution:
        """Build from ``{value: mass}``; zero masses are dropped."""
        items = sorted((float(x), float(m)) for x, m in table.items() if m != 0)
        return cls(tuple(x for x, _ in items), tuple(m for _, m in items))

    @classmethod
    def point_mass(cls, value: float) -> DiscreteDistribution:
        return cls((value,), (1.0,))

    @cached_property
    def _lookup(self) -> dict[float, float]:
        return dict(zip(self.points, self.masses))

    @cached_property
    def _cumulative(self) -> np.ndarray:
        cum = np.cumsum(self.masses)
        cum[-1] = 1.0
        return cum

    def pmf(self, x: float) -> float:
        return self._lookup.get(float(x), 0.0)

    def cdf(self, x: float) -> float:
        k = bisect.bisect_right(self.points, x)
        return 0.0 if k == 0 else float(self._cumulative[k - 1])

    def cdf_below(self, x: float) -> float:
        """Pr[X < x] (left limit of the CDF)."""
        k = bisect.bisect_left(self.points, x)
        return 0.0 if k == 0 else float(self._cumulative[k - 1])

    @property
    def mean(self) -> float:
        return math.fsum(x * m for x, m in zip(self.points, self.masses))

    def sample(self, rng: np.random.Generator) -> float:
        k = int(np.searchsorted(self._cumulative, rng.random(), side="right"))
        return self.points[min(k, len(self.points) - 1)]

    def sample_many(self, rng: np.random.Generator, size: int | tuple[int, ...]) -> np.ndarray:
        idx = np.searchsorted(self._cumulative, rng.random(size), side="right")
        return np.asarray(self.points)[np.minimum(idx, len(self.points) - 1)]

    def to_dict(self) -> dict:
        return {"points": list(self.points), "masses": list(self.masses)}


@dataclass(frozen=True)
class ArrivalOrder:
    """A permutation of candidate indices; ``perm[t]`` arrives at step ``t`` (0-based)."""

    perm: tuple[int, ...]

    def __post_init__(self) -> None:
        perm = tuple(int(i) for i in self.perm)
        object.__setattr__(self, "perm", perm)
        if sorted(perm) != list(range(len(perm))):
            raise ValueError(f"not a permutation of 0..{len(perm) - 1}: {perm}")

    @classmethod
    def identity(cls, n: int) -> ArrivalOrder:
        return cls(tuple(range(n)))

    @classmethod
    def from_one_based(cls, perm: Iterable[int]) -> ArrivalOrder:
        return cls(tuple(int(i) - 1 for i in perm))

    @classmethod
    def parse(cls, text: str) -> ArrivalOrder:
        """Parse a 1-based comma separated order such as ``"2,1"``."""
        return cls.from_one_based(int(tok) for tok in text.replace(" ", "").split(",") if tok)

    def one_based(self) -> tuple[int, ...]:
        return tuple(i + 1 for i in self.perm)

    def reversed(self) -> ArrivalOrder:
        return ArrivalOrder(self.perm[::-1])

    def __len__(self) -> int:
        return len(self.perm)

    def __iter__(self) -> Iterator[int]:
        return iter(self.perm)

    def __getitem__(self, t: int) -> int:
        return self.perm[t]

    def __str__(self) -> str:
        return "(" + ",".join(str(i) for i in self.one_based()) + ")"


def all_orders(n: int) -> list[ArrivalOrder]:
    return [ArrivalOrder(p) for p in itertools.permutations(range(n))]


@dataclass(frozen=True)
class Instance:
    """Independent candidates ``dists[0..n-1]``."""

    dists: tuple[DiscreteDistribution, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "dists", tuple(self.dists))
        if not self.dists:
            raise ValueError("instance needs at least one candidate")

    @property
    def n(self) -> int:
        return len(self.dists)

    @cached_property
    def support(self) -> tuple[float, ...]:
        return tuple(sorted({x for d in self.dists for x in d.points}))

    @cached_property
    def mass_table(self) -> np.ndarray:
        """``table[i, k] = f_i(support[k])``, zero where candidate i has no mass."""
        table = np.array([[d.pmf(x) for x in self.support] for d in self.dists])
        table.setflags(write=False)
        return table

    @property
    def has_common_support(self) -> bool:
        return all(len(d.points) == len(self.support) for d in self.dists)

    def check_order(self, order: ArrivalOrder) -> None:
        if len(order) != self.n:
            raise ValueError(f"order {order} has {len(order)} entries for {self.n} candidates")

    def to_dict(self, order: ArrivalOrder | None = None) -> dict:
        out: dict = {"dists": [d.to_dict() for d in self.dists]}
        if order is not None:
            out["order"] = list(order.one_based())
        return out


def combined_support(instance: Instance) -> list[float]:
    return list(instance.support)


def pmf(dist: DiscreteDistribution, x: float) -> float:
    return dist.pmf(x)


def cdf(dist: DiscreteDistribution, x: float) -> float:
    return dist.cdf(x)


def sample(dist: DiscreteDistribution, rng: np.random.Generator) -> float:
    return dist.sample(rng)


def max_cdf(instance: Instance, x: float) -> float:
    """Pr[max_i X_i <= x]."""
    return math.prod(d.cdf(x) for d in instance.dists)


def expected_max(instance: Instance) -> float:
    """Exact E[max_i X_i] from the product of CDFs over the combined support."""
    total = 0.0
    below = 0.0
    for x in instance.support:
        at = max_cdf(instance, x)
        total += x * (at - below)
        below = at
    return total


def sum_of_means(instance: Instance) -> float:
    return math.fsum(d.mean for d in instance.dists)


def instance_from_dict(data: Mapping) -> tuple[Instance, ArrivalOrder | None]:
    """Strict parser for the instance JSON format (1-based ``order``)."""
    try:
        raw = data["dists"]
    except (KeyError, TypeError):
        raise ValueError("instance JSON needs a 'dists' list") from None
    dists = []
    for k, entry in enumerate(raw):
        points = [float(x) for x in entry["points"]]
        masses = [float(m) for m in entry["masses"]]
        if len(set(points)) != len(points) or len(points) != len(masses):
            raise ValueError(f"distribution {k + 1}: duplicate points or length mismatch")
        total = math.fsum(masses)
        if abs(total - 1.0) > JSON_MASS_TOL:
            raise ValueError(f"distribution {k + 1}: masses sum to {total}")
        masses = [m / total for m in masses]
        dists.append(DiscreteDistribution.from_mapping(dict(zip(points, masses))))
    instance = Instance(tuple(dists), name=str(data.get("name", "")))
    order = None
    if data.get("order") is not None:
        order = ArrivalOrder.from_one_based(data["order"])
        instance.check_order(order)
    return instance, order


def load_instance(path: str | Path) -> tuple[Instance, ArrivalOrder | None]:
    with open(path) as fh:
        return instance_from_dict(json.load(fh))


def dump_instance(instance: Instance, path: str | Path, order: ArrivalOrder | None = None) -> None:
    with open(path, "w") as fh:
        json.dump(instance.to_dict(order), fh, indent=2)
        fh.write("\n")


def product_profiles(
    dists: Sequence[DiscreteDistribution],
) -> Iterator[tuple[tuple[float, ...], float]]:
    """All joint outcomes of independent ``dists`` with their probabilities."""
    for combo in itertools.product(*(tuple(zip(d.points, d.masses)) for d in dists)):
        yield tuple(x for x, _ in combo), math.prod(m for _, m in combo)
