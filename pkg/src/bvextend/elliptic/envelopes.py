"""Lipschitz envelopes over stopping configurations (grid-evaluated, n = 1).

The tent envelope of a selected cube rises to its side length with slope
1/delta; the sup over a child family gives the sawtooth graph whose
subgraph contains the children's Carleson boxes.  The complementary inf
envelopes bound the sawtooth regions of a principal cube from below with
slope 1.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..cubes import DyadicCube, GeometryConfig

__all__ = [
    "LipschitzEnvelope",
    "envelope_psi1",
    "envelope_psi2",
    "envelope_psi_star",
    "envelope_psi_star_star",
    "feature_box_disjoint",
    "feature_height_on_uncovered",
    "feature_dominates",
    "feature_regions_inside",
]


@dataclass(frozen=True)
class LipschitzEnvelope:
    """Values at the 2^-J cell centers with the asserted Lipschitz slope."""

    J: int
    values: np.ndarray
    lip_bound: float

    def max_slope(self) -> float:
        h = 2.0 ** (-self.J)
        return float(np.abs(np.diff(self.values)).max() / h) if len(self.values) > 1 else 0.0

    def check_lipschitz(self, tol: float = 1e-9) -> bool:
        return self.max_slope() <= self.lip_bound * (1 + tol)


def _cells(J: int) -> np.ndarray:
    return (np.arange(2**J) + 0.5) * 2.0 ** (-J)


def _dist_to_cube(x: np.ndarray, q: DyadicCube) -> np.ndarray:
    lo, hi = q.lower()[0], q.upper()[0]
    return np.maximum(np.maximum(lo - x, x - hi), 0.0)


def _dist_to_interval(x: np.ndarray, lo: float, hi: float) -> np.ndarray:
    return np.maximum(np.maximum(lo - x, x - hi), 0.0)


def envelope_psi1(children: list[DyadicCube], cfg: GeometryConfig, J: int) -> LipschitzEnvelope:
    """Tent sup over a child family: max_S' max(l(S') - dist(x,S')/delta, 0)."""
    x = _cells(J)
    vals = np.zeros_like(x)
    inv = 1.0 / cfg.delta
    for s in children:
        vals = np.maximum(vals, np.maximum(s.length - inv * _dist_to_cube(x, s), 0.0))
    return LipschitzEnvelope(J, vals, inv)


def envelope_psi2(territory: list[DyadicCube], cfg: GeometryConfig, J: int) -> LipschitzEnvelope:
    """Graph-domain inf over a principal territory: min_Q [delta l(Q) + dist(x,Q)]."""
    x = _cells(J)
    vals = np.full_like(x, np.inf)
    for q in territory:
        vals = np.minimum(vals, cfg.delta * q.length + _dist_to_cube(x, q))
    return LipschitzEnvelope(J, vals, 1.0)


def envelope_psi_star(r: DyadicCube, cfg: GeometryConfig, J: int) -> LipschitzEnvelope:
    """Single expanded-box envelope: delta' l(R*) + dist(x, R*), R* = kappa' R."""
    x = _cells(J)
    c = r.center()[0]
    half = cfg.kappa_prime * r.length / 2
    lstar = cfg.kappa_prime * r.length
    vals = cfg.dprime * lstar + _dist_to_interval(x, c - half, c + half)
    return LipschitzEnvelope(J, vals, 1.0)


def envelope_psi_star_star(territory: list[DyadicCube], cfg: GeometryConfig,
                           J: int) -> LipschitzEnvelope:
    """inf of the expanded-box envelopes over a principal territory."""
    x = _cells(J)
    vals = np.full_like(x, np.inf)
    for q in territory:
        vals = np.minimum(vals, envelope_psi_star(q, cfg, J).values)
    return LipschitzEnvelope(J, vals, 1.0)


# ---------------------------------------------------------------------------
# the envelope features, as exact set statements on the grid


def _cube_cells(q: DyadicCube, J: int) -> slice:
    u = 2 ** (J - q.j)
    return slice(q.k[0] * u, (q.k[0] + 1) * u)


def feature_box_disjoint(psi: LipschitzEnvelope, child: DyadicCube, tol: float = 1e-12) -> bool:
    """The child's Carleson box misses the region above the graph."""
    vals = psi.values[_cube_cells(child, psi.J)]
    return bool(vals.min() >= child.length - tol)


def feature_height_on_uncovered(psi: LipschitzEnvelope, child: DyadicCube,
                                tol: float = 1e-12) -> bool:
    """psi equals the side length identically on an uncovered child."""
    vals = psi.values[_cube_cells(child, psi.J)]
    return bool(np.abs(vals - child.length).max() <= tol)


def feature_dominates(psi_hi: LipschitzEnvelope, psi_lo: LipschitzEnvelope,
                      within: DyadicCube, tol: float = 1e-12) -> bool:
    """psi_hi >= psi_lo on the cells of the given cube."""
    sel = _cube_cells(within, psi_hi.J)
    return bool((psi_hi.values[sel] >= psi_lo.values[sel] - tol).all())


def feature_regions_inside(psi: LipschitzEnvelope, territory: list[DyadicCube],
                           delta: float, tol: float = 1e-12) -> bool:
    """Every Whitney rectangle of the territory sits above the graph.

    Closed-bottom convention: the bottom face may touch the graph.
    """
    for q in territory:
        vals = psi.values[_cube_cells(q, psi.J)]
        if vals.max() > delta * q.length + tol:
            return False
    return True
