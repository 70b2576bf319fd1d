"""Stopped square function, martingale levels, CZ decomposition, dyadic weights.

For an arbitrary collection omega of dyadic cubes, the stopping parent of
Q is the minimal member strictly containing Q (Q itself if none), and

    S_omega g(x)^2 = sum over Q in omega of |<g>_Q - <g>_{Q*}|^2 1_Q(x).

The L2 bound with constant one is a telescoping identity over the
generation decomposition of the collection; everything here is exact at
grid scale.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cubes import DyadicCube, unit_cube
from .functionals import (
    GridFunction,
    cube_index,
    level_averages,
    lp_norm,
    maximal_dyadic,
    _upsample,
)

__all__ = [
    "Weight",
    "MartingaleSequence",
    "generation_decomposition",
    "stopping_parent_map",
    "stopped_square",
    "haar_square_function",
    "l2_bound_check",
    "weak_l1_probe",
    "cz_decompose",
    "aq_characteristic",
    "weighted_sf_check",
    "good_lambda_probe",
    "random_family",
]


def stopping_parent_map(n: int, J: int, members: set[DyadicCube]) -> dict[DyadicCube, DyadicCube]:
    """pi(Q) = minimal member strictly containing Q, or Q itself if none."""
    out = {}
    for q in members:
        par = q
        best = None
        cur = q
        while cur.j > 0:
            cur = DyadicCube(n, cur.j - 1, tuple(k >> 1 for k in cur.k))
            if cur in members:
                best = cur
                break
        out[q] = best if best is not None else par
    return out


def generation_decomposition(n: int, J: int,
                             members: set[DyadicCube]) -> list[list[DyadicCube]]:
    """Layers omega_k: depth of a member = length of its pi-chain to a maximal one.

    Members of equal depth are pairwise disjoint, and the stopping parent
    of anything in omega_k lies in omega_{k-1}.
    """
    pi = stopping_parent_map(n, J, members)
    depth: dict[DyadicCube, int] = {}

    def d(q):
        if q in depth:
            return depth[q]
        p = pi[q]
        depth[q] = 0 if p == q else d(p) + 1
        return depth[q]

    layers: dict[int, list[DyadicCube]] = {}
    for q in members:
        layers.setdefault(d(q), []).append(q)
    return [layers[k] for k in sorted(layers)]


def stopped_square(g: GridFunction, members: set[DyadicCube]) -> GridFunction:
    """S_omega g = (sum over members of |<g>_Q - <g>_{Q*}|^2 1_Q)^(1/2)."""
    avgs = level_averages(g)
    pi = stopping_parent_map(g.n, g.J, members)
    s2 = np.zeros_like(g.values)
    for q in members:
        p = pi[q]
        diff = float(avgs[q.j][q.k]) - float(avgs[p.j][p.k])
        if diff != 0.0:
            s2[cube_index(q, g.J)] += diff * diff
    return GridFunction(g.n, g.J, np.sqrt(s2))


def haar_square_function(g: GridFunction) -> GridFunction:
    """Martingale-difference square function via conditional expectations.

    With omega = all dyadic cubes this is the classical dyadic square
    function: S^2(x) = sum over j of |E_j g(x) - E_{j-1} g(x)|^2, the
    Haar-coefficient evaluation used as an oracle.
    """
    avgs = level_averages(g)
    s2 = np.zeros_like(g.values)
    for j in range(1, g.J + 1):
        d = _upsample(avgs[j], g.n, 2 ** (g.J - j)) - _upsample(avgs[j - 1], g.n, 2 ** (g.J - j + 1))
        s2 += d * d
    return GridFunction(g.n, g.J, np.sqrt(s2))


@dataclass
class MartingaleSequence:
    """Levels u_k: averaged on the generation-k stopping cubes, g elsewhere."""

    g: GridFunction
    layers: list[list[DyadicCube]]
    levels: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not self.levels:
            avgs = level_averages(self.g)
            for layer in self.layers:
                uk = self.g.values.copy()
                for q in layer:
                    uk[cube_index(q, self.g.J)] = avgs[q.j][q.k]
                self.levels.append(uk)

    def orthogonality_defects(self) -> list[float]:
        """|int u_k u_{k+1} - int u_k^2| / int u_k^2 per consecutive pair."""
        w = self.g.cell_volume
        out = []
        for a, b in zip(self.levels, self.levels[1:]):
            ka = float((a * a).sum() * w)
            kab = float((a * b).sum() * w)
            out.append(abs(kab - ka) / ka if ka > 0 else 0.0)
        return out


def l2_bound_check(g: GridFunction, members: set[DyadicCube]) -> tuple[float, float]:
    """lhs = ||S_omega g||_2^2, rhs = ||g||_2^2; the telescoping gives lhs <= rhs."""
    s = stopped_square(g, members)
    return lp_norm(s, 2.0) ** 2, lp_norm(g, 2.0) ** 2


def weak_l1_probe(g: GridFunction, members: set[DyadicCube],
                  lam: float) -> tuple[float, float]:
    """measure of {S_omega g > lambda} against lambda^-1 ||g||_1."""
    if lam <= 0:
        raise ValueError("lambda must be positive")
    s = stopped_square(g, members)
    measure = float((s.values > lam).mean())
    bound = lp_norm(g, 1.0) / lam
    return measure, bound


def cz_decompose(g: GridFunction, lam: float) -> tuple[GridFunction, list[tuple[DyadicCube, GridFunction]]]:
    """Calderon-Zygmund splitting at height lambda.

    The bad cubes are the maximal dyadic cubes with avg |g| > lambda; on
    each, the bad part is g minus its average (mean zero), and the good
    part is capped by 2^n lambda.  If the whole domain exceeds lambda the
    single bad cube is the top cube.
    """
    if lam <= 0:
        raise ValueError("lambda must be positive")
    n, J = g.n, g.J
    avgs_abs = level_averages(g, absolute=True)
    avgs = level_averages(g)
    selected: list[DyadicCube] = []
    blocked = np.zeros((1,) * n, dtype=bool)
    for j in range(J + 1):
        over = avgs_abs[j] > lam
        new = over & ~blocked
        for k in np.argwhere(new):
            selected.append(DyadicCube(n, j, tuple(int(v) for v in k)))
        blocked = blocked | over
        if j < J:
            blocked = _upsample(blocked, n)
    good = g.values.copy()
    bad: list[tuple[DyadicCube, GridFunction]] = []
    for q in selected:
        idx = cube_index(q, J)
        avg = float(avgs[q.j][q.k])
        b = np.zeros_like(g.values)
        b[idx] = g.values[idx] - avg
        good[idx] = avg
        bad.append((q, GridFunction(n, J, b)))
    return GridFunction(n, J, good), bad


@dataclass
class Weight:
    """A positive weight on the grid with cached dyadic A_q characteristics.

    Values are clamped below at 1e-15; clamping events are counted and
    must be zero in reported runs.
    """

    w: GridFunction
    clamped: int = 0
    _cache: dict[float, float] = field(default_factory=dict)

    def __post_init__(self):
        vals = self.w.values
        low = vals < 1e-15
        self.clamped = int(low.sum())
        if self.clamped:
            self.w = GridFunction(self.w.n, self.w.J, np.maximum(vals, 1e-15))

    def characteristic(self, q: float) -> float:
        if q not in self._cache:
            self._cache[q] = aq_characteristic(self.w, q)
        return self._cache[q]

    def measure(self, mask: np.ndarray) -> float:
        return float((self.w.values * mask).sum() * self.w.cell_volume)


def aq_characteristic(w: GridFunction, q: float) -> float:
    """sup over dyadic Q of (avg_Q w) (avg_Q w^(1-q'))^(q-1), q' = q/(q-1)."""
    if q <= 1:
        raise ValueError("q must exceed 1")
    qp = q / (q - 1)
    a = level_averages(w)
    dual = GridFunction(w.n, w.J, w.values ** (1 - qp))
    b = level_averages(dual)
    best = 0.0
    for aj, bj in zip(a, b):
        best = max(best, float((aj * bj ** (q - 1)).max()))
    return best


def weighted_sf_check(g: GridFunction, members: set[DyadicCube], w: Weight,
                      p: float) -> tuple[float, float]:
    """lhs = ||S_omega g||_{L_p(w)}, rhs = ||M_D g||_{L_p(w)}."""
    s = stopped_square(g, members)
    m = maximal_dyadic(g)
    cw = g.cell_volume
    lhs = float(((np.abs(s.values) ** p) * w.w.values).sum() * cw) ** (1 / p)
    rhs = float(((np.abs(m.values) ** p) * w.w.values).sum() * cw) ** (1 / p)
    return lhs, rhs


def good_lambda_probe(g: GridFunction, members: set[DyadicCube], w: Weight,
                      lam: float, gamma: float) -> tuple[float, float]:
    """w-measures of {S > 2 lambda, M_D g < gamma lambda} and of {S > lambda}."""
    if not 0 < gamma < 0.5:
        raise ValueError("the good-lambda argument needs gamma < 1/2")
    s = stopped_square(g, members)
    m = maximal_dyadic(g)
    upper = (s.values > 2 * lam) & (m.values < gamma * lam)
    base = s.values > lam
    return w.measure(upper), w.measure(base)


def random_family(n: int, J: int, seed: int, keep: float = 0.15,
                  include_top: bool = True) -> set[DyadicCube]:
    """Fuzzing families: independent per-cube coin flips.

    The generation structure (disjoint layers omega_k with parents in
    omega_{k-1}) is recovered afterwards by the depth decomposition, which
    realizes the maximality filtering.
    """
    rng = np.random.default_rng(seed)
    out: set[DyadicCube] = set()
    if include_top:
        out.add(unit_cube(n))
    for j in range(1, J + 1):
        mask = rng.random((2**j,) * n) < keep
        for k in np.argwhere(mask):
            out.add(DyadicCube(n, j, tuple(int(v) for v in k)))
    return out
