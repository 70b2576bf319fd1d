"""Sample lattices over skip-grid Whitney regions and the sampled functionals.

Each Whitney rectangle W_Q = [delta l, l) x Q carries an m x m lattice of
left-endpoint samples (nested under refinement, so sampled sups are
monotone in m) plus the corkscrew point p_Q = ((1-eta) l, c_Q).  The small
top hypersurface above the center carries its own row.  All rows are
uniform in x, so the solution backends evaluate them fast.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cubes import DyadicCube, GeometryConfig, SkipGrid
from ..functionals import GridFunction, truncated_maximal_levels

__all__ = ["SampleSet", "RangeMax"]


class RangeMax:
    """Sparse-table range maxima with vectorized inclusive queries."""

    def __init__(self, vals: np.ndarray):
        self.vals = np.asarray(vals, dtype=float)
        p = len(self.vals)
        self.tables = [self.vals]
        size = 1
        while 2 * size <= p:
            prev = self.tables[-1]
            self.tables.append(np.maximum(prev[:p - 2 * size + 1], prev[size:p - size + 1]))
            size *= 2

    def query(self, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
        """max(vals[lo..hi]) per entry; empty or out-of-range windows give -inf."""
        p = len(self.vals)
        lo0, hi0 = np.asarray(lo), np.asarray(hi)
        ok = (lo0 <= hi0) & (hi0 >= 0) & (lo0 <= p - 1)
        out = np.full(lo0.shape, -np.inf)
        if not ok.any():
            return out
        lo_c = np.clip(lo0[ok], 0, p - 1)
        hi_c = np.clip(hi0[ok], 0, p - 1)
        ln = hi_c - lo_c + 1
        k = np.floor(np.log2(ln)).astype(int)
        tabidx = np.minimum(k, len(self.tables) - 1)
        res = np.empty(ln.shape)
        for kk in np.unique(tabidx):
            t = self.tables[kk]
            m = tabidx == kk
            res[m] = np.maximum(t[lo_c[m]], t[hi_c[m] - (1 << kk) + 1])
        out[ok] = res
        return out


@dataclass
class SampleSet:
    """Cached solution values on the skip Whitney lattices (n = 1).

    whitney[j] has shape (m, m * 2^j): row i holds u at height
    t = (delta + (i/m)(1-delta)) l on the uniform x-grid of spacing l/m.
    cork[j] holds u(p_Q) per cube, qtilde[j] the 3-point rows on the top
    hypersurfaces {l(Q)} x (eta Q).
    """

    solution: object
    grid: SkipGrid
    cfg: GeometryConfig
    m: int = 4
    whitney: dict[int, np.ndarray] = field(default_factory=dict)
    cork: dict[int, np.ndarray] = field(default_factory=dict)
    qtilde: dict[int, np.ndarray] = field(default_factory=dict)
    _rows: list[tuple[float, float, float, np.ndarray]] = field(default_factory=list)
    _nu_cache: dict[float, GridFunction] = field(default_factory=dict)

    def __post_init__(self):
        J = self.grid.base
        delta = self.grid.delta
        eta = self.cfg.eta
        for j in self.grid.generations:
            l = 2.0 ** (-j)
            ncub = 2**j
            dx = l / self.m
            w = np.empty((self.m, self.m * ncub))
            for i in range(self.m):
                t = (delta + (i / self.m) * (1 - delta)) * l
                w[i] = self.solution.evaluate_row(t, 0.0, dx, self.m * ncub)
                self._rows.append((t, 0.0, dx, w[i]))
            self.whitney[j] = w
            t_cork = (1 - eta) * l
            ck = self.solution.evaluate_row(t_cork, l / 2, l, ncub)
            self.cork[j] = ck
            self._rows.append((t_cork, l / 2, l, ck))
            qt = np.empty((3, ncub))
            for s in range(3):
                off = eta * l * ((s + 0.5) / 3.0 - 0.5)
                qt[s] = self.solution.evaluate_row(l, l / 2 + off, l, ncub)
                self._rows.append((l, l / 2 + off, l, qt[s]))
            self.qtilde[j] = qt

    @property
    def J(self) -> int:
        return self.grid.base

    def cube_block(self, j: int, k: int) -> np.ndarray:
        """The m x m lattice values over cube (j, k)."""
        return self.whitney[j][:, k * self.m:(k + 1) * self.m]

    def cube_samples_with_cork(self, j: int, k: int) -> np.ndarray:
        return np.concatenate([self.cube_block(j, k).ravel(), [self.cork[j][k]]])

    def osc_levels(self) -> dict[int, np.ndarray]:
        """Sampled oscillation per cube: max - min over lattice + corkscrew."""
        out = {}
        for j in self.grid.generations:
            blocks = self.whitney[j].reshape(self.m, 2**j, self.m)
            hi = np.maximum(blocks.max(axis=(0, 2)), self.cork[j])
            lo = np.minimum(blocks.min(axis=(0, 2)), self.cork[j])
            out[j] = hi - lo
        return out

    def sup_deviation_levels(self, ref: dict[int, np.ndarray]) -> dict[int, np.ndarray]:
        """Per cube: max over lattice + corkscrew of |u - ref_Q| (ref constant per cube)."""
        out = {}
        for j in self.grid.generations:
            blocks = self.whitney[j].reshape(self.m, 2**j, self.m)
            dev = np.abs(blocks - ref[j][None, :, None]).max(axis=(0, 2))
            dev = np.maximum(dev, np.abs(self.cork[j] - ref[j]))
            out[j] = dev
        return out

    # -- sampled non-tangential maximal function

    def nontangential(self, aperture: float | None = None) -> GridFunction:
        """Nu per grid cell: max of |u| over cached samples in the open cone."""
        alpha = aperture if aperture is not None else self.cfg.aperture
        if alpha in self._nu_cache:
            return self._nu_cache[alpha]
        J = self.J
        ncells = 2**J
        xc = (np.arange(ncells) + 0.5) * 2.0 ** (-J)
        out = np.zeros(ncells)
        for t, x0, dx, vals in self._rows:
            rm = RangeMax(np.abs(vals))
            lo = np.ceil((xc - alpha * t - x0) / dx + 1e-12).astype(int)
            hi = np.floor((xc + alpha * t - x0) / dx - 1e-12).astype(int)
            out = np.maximum(out, rm.query(lo, hi))
        nu = GridFunction(1, J, out)
        self._nu_cache[alpha] = nu
        return nu

    def mt_nu_levels(self, aperture: float | None = None) -> list[np.ndarray]:
        """Skip-truncated maximal function of Nu, per skip generation."""
        return truncated_maximal_levels(self.nontangential(aperture), self.grid.skip)

    # -- graph-domain suprema (for the control of u by M(Nu))

    def gamma_sup_levels(self) -> dict[int, np.ndarray]:
        """sup over samples in the graph domain above each cube of |u|.

        Gamma_Q = {(t,x): t > delta l(Q) + dist(x, Q)}, sampled on all
        cached rows.
        """
        delta = self.grid.delta
        out = {}
        for j in self.grid.generations:
            l = 2.0 ** (-j)
            ncub = 2**j
            lo_edge = np.arange(ncub) * l
            hi_edge = lo_edge + l
            best = np.full(ncub, -np.inf)
            for t, x0, dx, vals in self._rows:
                c = t - delta * l
                if c <= 0:
                    continue
                rm = RangeMax(np.abs(vals))
                lo = np.ceil((lo_edge - c - x0) / dx + 1e-12).astype(int)
                hi = np.floor((hi_edge + c - x0) / dx - 1e-12).astype(int)
                best = np.maximum(best, rm.query(lo, hi))
            out[j] = best
        return out
