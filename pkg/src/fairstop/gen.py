"""Named instances and a seeded random corpus."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from fairstop.core import DiscreteDistribution, Instance

VALUE_POOL = (0.0, 1.0, 2.0, 5.0, 10.0)


def _dist(table: dict[float, float]) -> DiscreteDistribution:
    return DiscreteDistribution.from_mapping(table)


def _check_eps(eps: float) -> None:
    if not 0 < eps < 1:
        raise ValueError(f"eps must lie in (0, 1), got {eps}")


def classic_tight(eps: float) -> Instance:
    """A sure value 1 followed by a long shot paying 1/eps with probability eps."""
    _check_eps(eps)
    return Instance(
        (DiscreteDistribution.point_mass(1.0), _dist({1.0 / eps: eps, 0.0: 1.0 - eps})),
        name=f"classic_tight(eps={eps:g})",
    )


def perturbed_tight(eps: float, delta: float) -> Instance:
    """The tight instance with mass ``delta`` added so both share {0, 1, 1/eps}."""
    _check_eps(eps)
    if not 0 < delta < eps**2:
        raise ValueError(f"need 0 < delta < eps^2, got delta={delta}, eps={eps}")
    high = 1.0 / eps
    return Instance(
        (
            _dist({high: delta, 1.0: 1.0 - 2.0 * delta, 0.0: delta}),
            _dist({high: eps, 1.0: delta, 0.0: 1.0 - delta - eps}),
        ),
        name=f"perturbed_tight(eps={eps:g},delta={delta:g})",
    )


def right_arc_instance(eps: float, delta: float = 0.0) -> Instance:
    """Sure value 1, then value 1 with probability eps.

    ``delta > 0`` moves that much of the first candidate's mass to 0 so both
    candidates share the support {0, 1}; by default the first candidate has no
    mass at 0 and the LP simply carries a zero coefficient there.
    """
    _check_eps(eps)
    if not 0 <= delta < 1:
        raise ValueError(f"delta must lie in [0, 1), got {delta}")
    first = _dist({1.0: 1.0 - delta, 0.0: delta})
    return Instance(
        (first, _dist({1.0: eps, 0.0: 1.0 - eps})),
        name=f"right_arc(eps={eps:g})",
    )


def must_hire_size(eps: float) -> int:
    return math.ceil(2.0 * math.log(2.0) / math.log(1.0 / (1.0 - eps / 2.0)))


def must_hire_instance(eps: float) -> Instance:
    """i.i.d. candidates worth 2/eps with probability eps/2, else 0."""
    _check_eps(eps)
    n = must_hire_size(eps)
    dist = _dist({2.0 / eps: eps / 2.0, 0.0: 1.0 - eps / 2.0})
    return Instance((dist,) * n, name=f"must_hire(eps={eps:g})")


def zero_one_instance() -> Instance:
    """Two 0-1 candidates: 1 w.p. 1/2 and 1 w.p. 2/3.

    Any single threshold in (0, 1) treats them differently by identity and
    by arrival time.
    """
    return Instance(
        (_dist({1.0: 0.5, 0.0: 0.5}), _dist({1.0: 2.0 / 3.0, 0.0: 1.0 / 3.0})),
        name="zero_one",
    )


def random_instance(
    n: int, support_size: int, seed: int, common_support: bool = True
) -> Instance:
    """Values from {0, 1, 2, 5, 10}, masses from a flat Dirichlet.

    With ``common_support=False`` each candidate keeps a random non-empty
    subset of the shared values.
    """
    if not 1 <= n <= 8:
        raise ValueError("n must lie in 1..8")
    if not 1 <= support_size <= len(VALUE_POOL):
        raise ValueError(f"support_size must lie in 1..{len(VALUE_POOL)}")
    rng = np.random.default_rng(seed)
    values = np.sort(rng.choice(VALUE_POOL, size=support_size, replace=False))
    dists = []
    for _ in range(n):
        pts = values
        if not common_support and support_size > 1:
            keep = rng.integers(1, support_size + 1)
            pts = np.sort(rng.choice(values, size=keep, replace=False))
        masses = rng.dirichlet(np.ones(pts.size))
        masses = masses / masses.sum()
        dists.append(DiscreteDistribution(tuple(pts.tolist()), tuple(masses.tolist())))
    tag = "" if common_support else ",mixed"
    return Instance(tuple(dists), name=f"random(n={n},s={support_size},seed={seed}{tag})")


def random_corpus(count: int = 100, seed: int = 0) -> list[Instance]:
    """Test corpus: n in {2,3,4}, |S| in {2,3}, every fourth with uneven supports."""
    corpus = []
    for k in range(count):
        n = 2 + k % 3
        size = 2 + (k // 3) % 2
        corpus.append(random_instance(n, size, seed * 100_003 + k, common_support=k % 4 != 3))
    return corpus


GENERATORS: dict[str, Callable[..., Instance]] = {
    "classic_tight": classic_tight,
    "perturbed_tight": perturbed_tight,
    "right_arc": right_arc_instance,
    "must_hire": must_hire_instance,
    "zero_one": zero_one_instance,
}


def generate(name: str, eps: float | None = None, delta: float | None = None) -> Instance:
    """Look up a generator by name; the CLI's ``--gen`` goes through here."""
    if name not in GENERATORS:
        raise ValueError(f"unknown generator {name!r}; choose from {', '.join(GENERATORS)}")
    if name == "zero_one":
        return zero_one_instance()
    if eps is None:
        raise ValueError(f"generator {name!r} needs --eps")
    if name == "perturbed_tight":
        return perturbed_tight(eps, eps**2 / 10.0 if delta is None else delta)
    if name == "right_arc":
        return right_arc_instance(eps, 0.0 if delta is None else delta)
    return GENERATORS[name](eps)
