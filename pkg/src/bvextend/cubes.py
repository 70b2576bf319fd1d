"""Dyadic cube systems on the unit cube, Whitney regions, and skip grids.

Everything lives over Q0 = [0,1)^n with finest scale 2^-J.  A cube of
generation j is 2^-j * ([0,1)^n + k), indexed by its integer corner
multi-index k.  The half-space above is truncated to t in (2^-(J+1), 1)
and tiled by Whitney regions W_Q = (l(Q)/2, l(Q)) x Q.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product

__all__ = [
    "DyadicCube",
    "SkipGrid",
    "WhitneyRegion",
    "GeometryConfig",
    "unit_cube",
    "children",
    "parent",
    "ancestors",
    "same_scale_neighbors",
    "skip_parent",
    "skip_children",
    "all_cubes",
]


@dataclass(frozen=True, order=True)
class DyadicCube:
    """Half-open dyadic cube 2^-j * ([0,1)^n + k)."""

    n: int
    j: int
    k: tuple[int, ...]

    def __post_init__(self):
        if self.n not in (1, 2):
            raise ValueError(f"dimension must be 1 or 2, got {self.n}")
        if self.j < 0:
            raise ValueError(f"generation must be >= 0, got {self.j}")
        if len(self.k) != self.n:
            raise ValueError(f"corner index has {len(self.k)} components, expected {self.n}")
        if any(not 0 <= ki < 2**self.j for ki in self.k):
            raise ValueError(f"corner index {self.k} out of range for generation {self.j}")

    @property
    def length(self) -> float:
        return 2.0 ** (-self.j)

    @property
    def volume(self) -> float:
        return 2.0 ** (-self.n * self.j)

    def lower(self) -> tuple[float, ...]:
        return tuple(ki * self.length for ki in self.k)

    def upper(self) -> tuple[float, ...]:
        return tuple((ki + 1) * self.length for ki in self.k)

    def center(self) -> tuple[float, ...]:
        return tuple((ki + 0.5) * self.length for ki in self.k)

    def contains(self, other: "DyadicCube") -> bool:
        """Dyadic containment: other is a (not necessarily strict) descendant."""
        if other.j < self.j:
            return False
        shift = other.j - self.j
        return all(oi >> shift == si for oi, si in zip(other.k, self.k))

    def contains_point(self, x: tuple[float, ...]) -> bool:
        lo, hi = self.lower(), self.upper()
        return all(l <= xi < h for l, xi, h in zip(lo, x, hi))

    def dist(self, other: "DyadicCube") -> float:
        """l-infinity distance between the closed cubes (0 if they touch)."""
        d = 0.0
        for a0, a1, b0, b1 in zip(self.lower(), self.upper(), other.lower(), other.upper()):
            d = max(d, b0 - a1, a0 - b1)
        return max(d, 0.0)


def unit_cube(n: int) -> DyadicCube:
    return DyadicCube(n, 0, (0,) * n)


def children(q: DyadicCube, depth: int) -> list[DyadicCube]:
    """The 2^n subcubes of the next generation tiling q.

    depth is the finest admissible generation J; descending past it is an error.
    """
    if q.j >= depth:
        raise ValueError(f"cube at generation {q.j} has no children at depth J={depth}")
    base = tuple(2 * ki for ki in q.k)
    return [
        DyadicCube(q.n, q.j + 1, tuple(b + o for b, o in zip(base, offs)))
        for offs in product((0, 1), repeat=q.n)
    ]


def parent(q: DyadicCube) -> DyadicCube:
    if q.j == 0:
        raise ValueError("unit cube has no parent")
    return DyadicCube(q.n, q.j - 1, tuple(ki >> 1 for ki in q.k))


def ancestors(q: DyadicCube) -> list[DyadicCube]:
    """Strict ancestors of q, one per generation, smallest first."""
    out = []
    cur = q
    while cur.j > 0:
        cur = parent(cur)
        out.append(cur)
    return out


def same_scale_neighbors(q: DyadicCube) -> list[DyadicCube]:
    """All cubes of generation q.j whose boundary meets the boundary of q.

    Clipped at the unit-cube boundary: no periodic identification, edge
    cubes simply have fewer neighbors.
    """
    m = 2**q.j
    out = []
    for offs in product((-1, 0, 1), repeat=q.n):
        if all(o == 0 for o in offs):
            continue
        kk = tuple(ki + o for ki, o in zip(q.k, offs))
        if all(0 <= c < m for c in kk):
            out.append(DyadicCube(q.n, q.j, kk))
    return out


@dataclass(frozen=True)
class SkipGrid:
    """The subsystem D^delta keeping every N-th generation, delta = 2^-N."""

    base: int
    skip: int

    def __post_init__(self):
        if self.skip < 1:
            raise ValueError("skip must be >= 1")
        if self.base % self.skip != 0:
            raise ValueError(f"depth J={self.base} must be a multiple of the skip {self.skip}")

    @property
    def delta(self) -> float:
        return 2.0 ** (-self.skip)

    @property
    def generations(self) -> list[int]:
        return list(range(0, self.base + 1, self.skip))

    def admissible(self, q: DyadicCube) -> bool:
        return q.j % self.skip == 0 and q.j <= self.base

    def check_margin(self, m: int) -> None:
        # Lemma-level dichotomy needs the margin strip to have positive volume.
        if 2 * m * self.delta >= 1:
            raise ValueError(f"need delta*(2m) < 1, got delta={self.delta}, m={m}")


def skip_parent(q: DyadicCube, grid: SkipGrid) -> DyadicCube:
    """The D^delta ancestor one skip-generation up."""
    if q.j == 0:
        raise ValueError("top cube has no skip parent")
    if q.j % grid.skip != 0:
        raise ValueError(f"generation {q.j} is not a multiple of the skip {grid.skip}")
    jj = q.j - grid.skip
    return DyadicCube(q.n, jj, tuple(ki >> grid.skip for ki in q.k))


def skip_children(q: DyadicCube, grid: SkipGrid) -> list[DyadicCube]:
    """All D^delta cubes one skip-generation down inside q."""
    if q.j + grid.skip > grid.base:
        raise ValueError(f"cube at generation {q.j} is at the skip grid's bottom")
    jj = q.j + grid.skip
    base = tuple(ki << grid.skip for ki in q.k)
    side = 1 << grid.skip
    return [
        DyadicCube(q.n, jj, tuple(b + o for b, o in zip(base, offs)))
        for offs in product(range(side), repeat=q.n)
    ]


@dataclass(frozen=True)
class WhitneyRegion:
    """The box above a cube: (l/2, l) x Q on the full grid, [delta*l, l) x Q on a skip grid."""

    cube: DyadicCube
    delta: float = 0.5  # bottom fraction; 0.5 for the full dyadic grid

    @property
    def t_range(self) -> tuple[float, float]:
        l = self.cube.length
        return (self.delta * l, l)

    @property
    def volume(self) -> float:
        lo, hi = self.t_range
        return (hi - lo) * self.cube.volume


@dataclass(frozen=True)
class GeometryConfig:
    """Cone apertures, Whitney parameters, and the skip-grid geometry knobs.

    aperture: non-tangential cone half-width per unit height.  Must be at
    least 1/delta when used with the skip-grid solution machinery.
    """

    aperture: float = 1.0
    c0: float = 2.0
    c1: float = 1.0
    margin: int = 6
    skip: int = 4
    alpha_reg: float = 1.0
    eta: float = 0.0125
    delta_prime: float = field(default=0.0)  # 0 means delta/2
    kappa_prime: float = 1.25
    theta: float = 0.0  # 0 means 1 - 2*delta

    def __post_init__(self):
        if self.aperture <= 0:
            raise ValueError("aperture must be positive")
        if self.c0 <= 1 or self.c1 <= 0:
            raise ValueError("need c0 > 1 and c1 > 0")
        if not 0 < self.alpha_reg <= 1:
            raise ValueError("alpha_reg must lie in (0, 1]")
        if not 0 < self.eta < 1:
            raise ValueError("eta must lie in (0, 1)")
        if self.kappa_prime <= 1:
            raise ValueError("kappa_prime must exceed 1")
        delta = 2.0 ** (-self.skip)
        if 2 * self.margin * delta >= 1:
            raise ValueError("need 2*margin*delta < 1")
        if self.delta_prime and not 0 < self.delta_prime < delta:
            raise ValueError("delta_prime must lie in (0, delta)")
        if self.theta and not 0 < self.theta < 1:
            raise ValueError("theta must lie in (0, 1)")

    @property
    def delta(self) -> float:
        return 2.0 ** (-self.skip)

    @property
    def dprime(self) -> float:
        return self.delta_prime if self.delta_prime else self.delta / 2

    @property
    def theta_eff(self) -> float:
        return self.theta if self.theta else 1 - 2 * self.delta

    @staticmethod
    def for_elliptic(skip: int = 4, eps: float = 0.25, alpha_reg: float = 1.0) -> "GeometryConfig":
        """Defaults with aperture >= 1/delta and eta tied to eps via eta^alpha <= eps/10."""
        delta = 2.0 ** (-skip)
        eta = (eps / 10.0) ** (1.0 / alpha_reg)
        return GeometryConfig(aperture=max(1.0, 1.0 / delta), skip=skip,
                              alpha_reg=alpha_reg, eta=eta)


def all_cubes(n: int, depth: int, skip: int = 1) -> list[DyadicCube]:
    """Every admissible cube, coarsest generation first."""
    out = []
    for j in range(0, depth + 1, skip):
        for k in product(range(2**j), repeat=n):
            out.append(DyadicCube(n, j, k))
    return out
