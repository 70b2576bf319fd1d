"""Grid-resolved boundary functions and the maximal, Carleson and area functionals.

Boundary data lives on the 2^-J grid over [0,1)^n; half-space functions that
are constant on Whitney regions are stored as one array per admissible
generation.  All dyadic functionals are computed in O(J 2^nJ) by running
maxima / prefix sums along the generation axis.  Integrals are grid sums
with cell weight 2^-nJ.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import maximum_filter1d

from .cubes import DyadicCube, GeometryConfig, SkipGrid, all_cubes, unit_cube

__all__ = [
    "GridFunction",
    "WhitneyFunction",
    "JumpMeasure",
    "VerticalJump",
    "LateralJump",
    "lp_norm",
    "level_averages",
    "truncated_maximal_levels",
    "maximal_dyadic",
    "maximal_truncated",
    "lemma31_check",
    "nontangential_max",
    "nontangential_max_dyadic",
    "carleson_dyadic",
    "carleson_dyadic_direct",
    "carleson_of_gradient",
    "area_functional_dyadic",
    "area_functional",
    "nontangential_max_nondyadic_gridfn",
    "carleson_nondyadic",
    "aperture_ratio_report",
    "dyadic_vs_nondyadic_report",
    "save_grid_function",
    "load_grid_function",
    "save_whitney_function",
    "load_whitney_function",
]


# ---------------------------------------------------------------------------
# boundary grid functions


@dataclass(frozen=True)
class GridFunction:
    """Real values on the 2^-J grid of the unit cube, shape (2^J,)*n."""

    n: int
    J: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        expected = (2**self.J,) * self.n
        if vals.shape != expected:
            if vals.size == 2 ** (self.n * self.J):
                vals = vals.reshape(expected)
            else:
                raise ValueError(f"values shape {vals.shape} incompatible with n={self.n}, J={self.J}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("values must be finite")
        object.__setattr__(self, "values", vals)

    @property
    def cell_volume(self) -> float:
        return 2.0 ** (-self.n * self.J)

    def mean(self) -> float:
        return float(self.values.mean())

    def restrict_cell_average(self, q: DyadicCube) -> float:
        return float(self.values[cube_index(q, self.J)].mean())

    def __add__(self, other):
        return GridFunction(self.n, self.J, self.values + other.values)

    def __sub__(self, other):
        return GridFunction(self.n, self.J, self.values - other.values)

    def __mul__(self, c: float):
        return GridFunction(self.n, self.J, self.values * c)

    __rmul__ = __mul__


def cube_index(q: DyadicCube, J: int):
    """Slice selecting the 2^-J cells of q, for arrays of shape (2^J,)*n."""
    u = 2 ** (J - q.j)
    return tuple(slice(ki * u, (ki + 1) * u) for ki in q.k)


def lp_norm(g, p: float, n: int | None = None, J: int | None = None) -> float:
    """(2^-nJ sum |g|^p)^(1/p) on the boundary grid."""
    if isinstance(g, GridFunction):
        vals, n, J = g.values, g.n, g.J
    else:
        vals = np.asarray(g, dtype=float)
    if p <= 0:
        raise ValueError("p must be positive")
    w = 2.0 ** (-n * J)
    return float((w * np.abs(vals) ** p).sum() ** (1.0 / p))


# ---------------------------------------------------------------------------
# level machinery


def _block_mean(arr: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return arr.reshape(-1, 2).mean(axis=1)
    m = arr.shape[0] // 2
    return arr.reshape(m, 2, m, 2).mean(axis=(1, 3))


def _upsample(arr: np.ndarray, n: int, factor: int = 2) -> np.ndarray:
    out = arr
    for ax in range(n):
        out = np.repeat(out, factor, axis=ax)
    return out


def level_averages(g: GridFunction, absolute: bool = False) -> list[np.ndarray]:
    """avg_Q g for every cube, as one array per generation j = 0..J."""
    vals = np.abs(g.values) if absolute else g.values
    levels = [vals]
    for _ in range(g.J):
        levels.append(_block_mean(levels[-1], g.n))
    levels.reverse()
    return levels


def truncated_maximal_levels(g: GridFunction, skip: int = 1) -> list[np.ndarray]:
    """M_D g(Q) = sup over dyadic R >= Q of avg_R |g|, one array per generation.

    The supremum is inclusive (R = Q counts).  With skip > 1 the supremum
    ranges over the skip grid only, and the list has one entry per
    admissible generation.
    """
    avgs = level_averages(g, absolute=True)
    picked = avgs[::skip]
    out = [picked[0]]
    for arr in picked[1:]:
        out.append(np.maximum(arr, _upsample(out[-1], g.n, 2**skip)))
    return out


def maximal_dyadic(g: GridFunction) -> GridFunction:
    """(M_D g)(x): per-cell max of ancestor-cube averages of |g|."""
    return GridFunction(g.n, g.J, truncated_maximal_levels(g)[-1])


def maximal_truncated(g: GridFunction, q: DyadicCube) -> float:
    """M_D g(Q) for a single cube (inclusive supremum over R >= Q)."""
    return float(truncated_maximal_levels(g)[q.j][q.k])


def lemma31_check(g: GridFunction, q: DyadicCube) -> tuple[float, float]:
    """lhs = |Q| / M_D g(Q) and rhs = 4 * sum_Q cellvol / M_D g(x).

    Raises if g vanishes on every ancestor of Q (the truncated maximal
    function is zero there and the ratio is undefined).
    """
    mt = truncated_maximal_levels(g)
    mq = float(mt[q.j][q.k])
    if mq == 0.0:
        raise ZeroDivisionError(f"M_D g vanishes at {q}; lemma check undefined")
    lhs = q.volume / mq
    cellwise = mt[-1][cube_index(q, g.J)]
    rhs = 4.0 * float((g.cell_volume / cellwise).sum())
    return lhs, rhs


# ---------------------------------------------------------------------------
# Whitney-constant half-space functions


@dataclass(frozen=True)
class WhitneyFunction:
    """One real value per admissible cube; constant on each Whitney region.

    levels maps generation j to an array of shape (2^j,)*n.  On the full
    grid (skip=1) the region above a generation-j cube is (l/2, l) x Q;
    on a skip grid it is [delta*l, l) x Q with delta = 2^-skip.
    """

    n: int
    J: int
    levels: dict[int, np.ndarray]
    skip: int = 1

    def __post_init__(self):
        gens = list(range(0, self.J + 1, self.skip))
        if sorted(self.levels) != gens:
            raise ValueError(f"levels must cover generations {gens}, got {sorted(self.levels)}")
        fixed = {}
        for j, arr in self.levels.items():
            a = np.asarray(arr, dtype=float)
            if a.shape != (2**j,) * self.n:
                raise ValueError(f"level {j} has shape {a.shape}")
            fixed[j] = a
        object.__setattr__(self, "levels", fixed)

    @property
    def delta(self) -> float:
        return 2.0 ** (-self.skip)

    @property
    def generations(self) -> list[int]:
        return sorted(self.levels)

    def region_volume(self, j: int) -> float:
        """|W_Q| for a generation-j cube."""
        l = 2.0 ** (-j)
        return (1.0 - self.delta) * l * 2.0 ** (-self.n * j)

    def __getitem__(self, q: DyadicCube) -> float:
        return float(self.levels[q.j][q.k])

    def map(self, fn) -> "WhitneyFunction":
        return WhitneyFunction(self.n, self.J, {j: fn(a) for j, a in self.levels.items()}, self.skip)

    def __add__(self, other):
        return WhitneyFunction(self.n, self.J,
                               {j: self.levels[j] + other.levels[j] for j in self.levels}, self.skip)

    def __sub__(self, other):
        return WhitneyFunction(self.n, self.J,
                               {j: self.levels[j] - other.levels[j] for j in self.levels}, self.skip)

    def __mul__(self, c: float):
        return WhitneyFunction(self.n, self.J, {j: c * a for j, a in self.levels.items()}, self.skip)

    __rmul__ = __mul__

    @staticmethod
    def constant(n: int, J: int, value: float, skip: int = 1) -> "WhitneyFunction":
        return WhitneyFunction(n, J, {j: np.full((2**j,) * n, float(value))
                                      for j in range(0, J + 1, skip)}, skip)


def _ancestor_chain_fold(f: WhitneyFunction, op, init=None) -> np.ndarray:
    """Fold op down the ancestor chains; result at the finest generation."""
    gens = f.generations
    acc = f.levels[gens[0]].copy() if init is None else init(f.levels[gens[0]])
    factor = 2**f.skip
    for j in gens[1:]:
        acc = op(f.levels[j], _upsample(acc, f.n, factor))
    return acc


def nontangential_max_dyadic(f: WhitneyFunction) -> GridFunction:
    """N_D f(x) = sup over cubes Q containing x of |f_Q|."""
    gens = f.generations
    acc = np.abs(f.levels[gens[0]])
    factor = 2**f.skip
    for j in gens[1:]:
        acc = np.maximum(np.abs(f.levels[j]), _upsample(acc, f.n, factor))
    if gens[-1] != f.J:
        acc = _upsample(acc, f.n, 2 ** (f.J - gens[-1]))
    return GridFunction(f.n, f.J, acc)


def _subtree_sums(f: WhitneyFunction, weighted_abs: bool = True) -> dict[int, np.ndarray]:
    """sum over R inside Q (inclusive) of |f_R| |W_R|, per generation."""
    gens = f.generations
    out: dict[int, np.ndarray] = {}
    acc = None
    for j in reversed(gens):
        term = np.abs(f.levels[j]) * f.region_volume(j) if weighted_abs else f.levels[j]
        if acc is None:
            acc = term
        else:
            fine = acc
            for _ in range(f.skip):
                if f.n == 1:
                    fine = fine.reshape(-1, 2).sum(axis=1)
                else:
                    m = fine.shape[0] // 2
                    fine = fine.reshape(m, 2, m, 2).sum(axis=(1, 3))
            acc = term + fine
        out[j] = acc
    return out


def carleson_dyadic(f: WhitneyFunction) -> GridFunction:
    """C_D f(x) = sup over Q containing x of |Q|^-1 sum_{R inside Q} |f_R| |W_R|.

    One bottom-up tree pass for the box sums, then a running max down the
    ancestor chains.
    """
    sums = _subtree_sums(f)
    gens = f.generations
    acc = sums[gens[0]] / 2.0 ** (-f.n * gens[0])
    factor = 2**f.skip
    for j in gens[1:]:
        acc = np.maximum(sums[j] / 2.0 ** (-f.n * j), _upsample(acc, f.n, factor))
    if gens[-1] != f.J:
        acc = _upsample(acc, f.n, 2 ** (f.J - gens[-1]))
    return GridFunction(f.n, f.J, acc)


def carleson_dyadic_direct(f: WhitneyFunction) -> GridFunction:
    """O(N^2) reference evaluation of carleson_dyadic (oracle for tests)."""
    cubes = all_cubes(f.n, f.J, f.skip)
    box = {}
    for q in cubes:
        s = 0.0
        for r in cubes:
            if q.contains(r):
                s += abs(f[r]) * f.region_volume(r.j)
        box[q] = s / q.volume
    out = np.zeros((2**f.J,) * f.n)
    for q in cubes:
        idx = cube_index(q, f.J)
        out[idx] = np.maximum(out[idx], box[q])
    return GridFunction(f.n, f.J, out)


def area_functional_dyadic(f: WhitneyFunction) -> GridFunction:
    """A_D f(x) = sum over cubes Q containing x of |f_Q| l(Q)."""
    gens = f.generations
    acc = np.abs(f.levels[gens[0]]) * 2.0 ** (-gens[0])
    factor = 2**f.skip
    for j in gens[1:]:
        acc = np.abs(f.levels[j]) * 2.0 ** (-j) + _upsample(acc, f.n, factor)
    if gens[-1] != f.J:
        acc = _upsample(acc, f.n, 2 ** (f.J - gens[-1]))
    return GridFunction(f.n, f.J, acc)


# ---------------------------------------------------------------------------
# non-dyadic (cone / arbitrary box) variants


def _cells_axis(J: int) -> np.ndarray:
    return (np.arange(2**J) + 0.5) * 2.0 ** (-J)


def nontangential_max(f: WhitneyFunction, cfg: GeometryConfig) -> GridFunction:
    """Nf(x) over the truncated cone |y - x| < aperture * t, evaluated at cell centers.

    For Whitney-constant f this is a max over the finitely many cubes whose
    region meets the cone: dist(x, Q) < aperture * l(Q).
    """
    alpha = cfg.aperture
    J, n = f.J, f.n
    out = np.zeros((2**J,) * n)
    xs = _cells_axis(J)
    for j in f.generations:
        vals = np.abs(f.levels[j])
        l = 2.0 ** (-j)
        if n == 1:
            up = _upsample(vals, 1, 2 ** (J - j))
            # cells whose center is within alpha*l of the cube footprint
            r = alpha * 2.0 ** (J - j)
            w = int(math.floor(r + 0.5 - 1e-9))
            cover = maximum_filter1d(up, size=2 * w + 1, mode="constant", cval=0.0)
            out = np.maximum(out, cover)
        else:
            lo = np.arange(2**j) * l
            hi = lo + l
            # euclidean distance from cell centers to cube footprints, one cube row at a time
            dx = np.maximum(np.maximum(lo[:, None] - xs[None, :], xs[None, :] - hi[:, None]), 0.0)
            for k0 in range(2**j):
                d0 = dx[k0]
                dist2 = d0[:, None] ** 2 + (dx**2)[:, None, :]  # (k1, x0, x1)
                reach = dist2 < (alpha * l) ** 2
                cand = np.where(reach, vals[k0][:, None, None], 0.0).max(axis=0)
                out = np.maximum(out, cand)
    return GridFunction(n, J, out)


def _covering_max(box: np.ndarray, m: int, ncells: int) -> np.ndarray:
    """out[c] = max over starts a with a <= c < a + m of box[a]."""
    pad = np.full(m - 1, -np.inf)
    ext = np.concatenate([pad, box, pad]) if m > 1 else box
    win = np.lib.stride_tricks.sliding_window_view(ext, m)
    return win.max(axis=1)[:ncells]


def carleson_nondyadic(f: WhitneyFunction, shifts: bool = True) -> GridFunction:
    """Cf(x) = sup over boxes of the normalized box integral of |f|.

    n=1: exact supremum over all intervals with endpoints on the 2^-J grid
    (O(2^2J), fine for J <= 10).  n=2: supremum over the standard dyadic
    grid and the grids translated by 1/3 in each coordinate combination
    (dominates arbitrary cubes up to a fixed constant, enough for
    measured-ratio diagnostics; keep J small).
    """
    J, n = f.J, f.n
    if n == 1:
        ncells = 2**J
        h = 2.0 ** (-J)
        level_cells = {j: _upsample(np.abs(f.levels[j]), 1, 2 ** (J - j))
                       for j in f.generations}
        best = np.zeros(ncells)
        for m in range(1, ncells + 1):
            li = m * h
            dens = np.zeros(ncells)
            for j in f.generations:
                lo_t, hi_t = f.delta * 2.0 ** (-j), 2.0 ** (-j)
                height = max(0.0, min(hi_t, li) - lo_t)
                if height > 0:
                    dens += level_cells[j] * height
            csum = np.concatenate([[0.0], np.cumsum(dens * h)])
            box = (csum[m:] - csum[:-m]) / li  # start a = 0..ncells-m
            best = np.maximum(best, _covering_max(box, m, ncells))
        return GridFunction(1, J, best)

    # n = 2: shifted dyadic grids
    shift_vals = [0.0, 1.0 / 3.0] if shifts else [0.0]
    prefix2 = {}
    for j in f.generations:
        up = _upsample(np.abs(f.levels[j]), 2, 2 ** (J - j))
        p = np.zeros((2**J + 1, 2**J + 1))
        p[1:, 1:] = up.cumsum(axis=0).cumsum(axis=1) * 4.0 ** (-J)
        prefix2[j] = p

    def rect_mass(j, x0, x1, y0, y1):
        p = prefix2[j]
        h = 2.0 ** (-J)

        def ev1(prefixline, x):
            x = min(max(x, 0.0), 1.0)
            pos = x / h
            i = min(int(pos), len(prefixline) - 2)
            return prefixline[i] + (pos - i) * (prefixline[i + 1] - prefixline[i])

        def ev(x, y):
            pos = min(max(x, 0.0), 1.0) / h
            i = min(int(pos), p.shape[0] - 2)
            line = p[i] + (pos - i) * (p[i + 1] - p[i])
            return ev1(line, y)

        return ev(x1, y1) - ev(x0, y1) - ev(x1, y0) + ev(x0, y0)

    xs = _cells_axis(J)
    out = np.zeros((2**J, 2**J))
    for s0 in shift_vals:
        for s1 in shift_vals:
            for jq in range(0, J + 1):
                l = 2.0 ** (-jq)
                k0 = np.floor((xs - s0) / l)
                k1 = np.floor((xs - s1) / l)
                for a, i0 in enumerate(k0):
                    x0, x1 = i0 * l + s0, (i0 + 1) * l + s0
                    for b, i1 in enumerate(k1):
                        y0, y1 = i1 * l + s1, (i1 + 1) * l + s1
                        total = 0.0
                        for j in f.generations:
                            lo_t, hi_t = f.delta * 2.0 ** (-j), 2.0 ** (-j)
                            height = max(0.0, min(hi_t, l) - lo_t)
                            if height > 0:
                                total += height * rect_mass(j, x0, x1, y0, y1)
                        out[a, b] = max(out[a, b], total / l**2)
    return GridFunction(2, J, out)


def area_functional(f: WhitneyFunction, cfg: GeometryConfig) -> GridFunction:
    """Continuous area functional: cone integral of |f(t,y)| t^-n dt dy.

    Evaluated as a grid sum on the (t, y) lattice with t-resolution
    2^-(J+1) (midpoints), over the truncated cone t in (2^-(J+1), 1).
    """
    alpha = cfg.aperture
    J, n = f.J, f.n
    nt = 2 ** (J + 1)
    dt = 1.0 / nt
    ts = (np.arange(nt) + 0.5) * dt
    # whitney level owning each t-slab: l(Q)*delta <= t < l(Q)
    jlev = np.clip(np.floor(-np.log2(ts)).astype(int), 0, J)
    if f.skip > 1:
        jlev = (jlev // f.skip) * f.skip
    xs = _cells_axis(J)
    out = np.zeros((2**J,) * n)
    h = 2.0 ** (-J)
    for it in range(nt):
        t = ts[it]
        j = int(jlev[it])
        vals = np.abs(f.levels[j])
        up = _upsample(vals, n, 2 ** (J - j))
        r = alpha * t
        if n == 1:
            # overlap length of each cell with (x - r, x + r), per evaluation cell x
            w = int(math.floor(r / h))
            kern_halfwidth = w + 1
            offs = np.arange(-kern_halfwidth, kern_halfwidth + 1)
            # overlap of cell at offset o (cells away) with the interval of radius r
            lo = np.maximum((offs - 0.5) * h, -r)
            hi = np.minimum((offs + 0.5) * h, r)
            kern = np.clip(hi - lo, 0.0, None)
            contrib = np.convolve(up, kern[::-1], mode="same")
            out += contrib * (t ** (-n)) * dt
        else:
            w = int(math.floor(r / h)) + 1
            offs = np.arange(-w, w + 1)
            from scipy.signal import fftconvolve

            oy, ox = np.meshgrid(offs, offs, indexing="ij")
            cell_lo0, cell_hi0 = (oy - 0.5) * h, (oy + 0.5) * h
            cell_lo1, cell_hi1 = (ox - 0.5) * h, (ox + 0.5) * h
            d0 = np.maximum(np.maximum(cell_lo0, -cell_hi0), 0.0)
            d1 = np.maximum(np.maximum(cell_lo1, -cell_hi1), 0.0)
            inside = (d0**2 + d1**2) < r**2
            kern = inside * h**2
            contrib = fftconvolve(up, kern, mode="same")
            out += contrib * (t ** (-n)) * dt
    return GridFunction(n, J, out)


def nontangential_max_nondyadic_gridfn(f: WhitneyFunction, alpha: float) -> GridFunction:
    return nontangential_max(f, GeometryConfig(aperture=alpha))


def aperture_ratio_report(f: WhitneyFunction, alpha: float, beta: float, p: float) -> dict:
    """||N^(a) f||_p / ||N^(b) f||_p and the analogous area-functional ratio."""
    if alpha <= 0 or beta <= 0:
        raise ValueError("apertures must be positive")
    ca, cb = GeometryConfig(aperture=alpha), GeometryConfig(aperture=beta)
    na = lp_norm(nontangential_max(f, ca), p)
    nb = lp_norm(nontangential_max(f, cb), p)
    aa = lp_norm(area_functional(f, ca), p)
    ab = lp_norm(area_functional(f, cb), p)
    if nb == 0 or ab == 0:
        raise ZeroDivisionError("ratio undefined for identically zero input")
    return {"N_ratio": na / nb, "A_ratio": aa / ab}


def dyadic_vs_nondyadic_report(f: WhitneyFunction, p: float, cfg: GeometryConfig | None = None) -> dict:
    """Measured ||Nf||_p/||N_D f||_p, ||Cf||_p/||C_D f||_p, ||Af||_p/||A_D f||_p."""
    cfg = cfg or GeometryConfig()
    nd = lp_norm(nontangential_max_dyadic(f), p)
    cd = lp_norm(carleson_dyadic(f), p)
    ad = lp_norm(area_functional_dyadic(f), p)
    if nd == 0 or cd == 0 or ad == 0:
        raise ZeroDivisionError("ratio undefined for identically zero input")
    nn = lp_norm(nontangential_max(f, cfg), p)
    cn = lp_norm(carleson_nondyadic(f), p)
    an = lp_norm(area_functional(f, cfg), p)
    return {"rN": nn / nd, "rC": cn / cd, "rA": an / ad}


# ---------------------------------------------------------------------------
# jump measures (gradients of Whitney-constant functions)


@dataclass(frozen=True)
class VerticalJump:
    """d_t jump across the horizontal interface at t = l(child), footprint child."""

    parent: DyadicCube
    child: DyadicCube
    mass: float

    @property
    def t(self) -> float:
        return self.child.length


@dataclass(frozen=True)
class LateralJump:
    """grad_x jump across the shared face of two same-generation cubes."""

    left: DyadicCube
    right: DyadicCube
    mass: float
    t_lo: float
    t_hi: float

    @property
    def axis_position(self) -> float:
        # n=1 only: the shared grid point
        return max(self.left.lower()[0], self.right.lower()[0])


@dataclass
class JumpMeasure:
    """|grad f| of a Whitney-constant f as weighted interfaces.

    Vertical terms sit on parent-child horizontal faces, lateral terms on
    shared vertical faces.  Box queries use the closure convention: the
    part of the boundary of the Carleson box inside the open half-space
    is counted.  top_terms holds the jump at the top face of the full
    domain box (excluded from queries by default, reported separately).
    """

    n: int
    J: int
    skip: int = 1
    verticals: list[VerticalJump] = field(default_factory=list)
    laterals: list[LateralJump] = field(default_factory=list)
    top_terms: list[VerticalJump] = field(default_factory=list)

    def total_vertical(self) -> float:
        return sum(v.mass for v in self.verticals)

    def total_lateral(self) -> float:
        return sum(l.mass for l in self.laterals)

    def total_top(self) -> float:
        return sum(v.mass for v in self.top_terms)

    def total(self) -> float:
        return self.total_vertical() + self.total_lateral()

    def _attribution_levels(self, include_top: bool = False) -> dict[int, np.ndarray]:
        """Tree attribution so that box mass(Q) = subtree sum at Q.

        A lateral face between R and S is counted in every closed box
        whose cube contains R or S; inclusion-exclusion puts +m at R,
        +m at S and -m at their lowest common skip ancestor.
        """
        gens = list(range(0, self.J + 1, self.skip))
        levels = {j: np.zeros((2**j,) * self.n) for j in gens}
        for v in self.verticals:
            levels[v.child.j][v.child.k] += v.mass
        if include_top:
            for v in self.top_terms:
                levels[v.child.j][v.child.k] += v.mass
        for lat in self.laterals:
            r, s = lat.left, lat.right
            levels[r.j][r.k] += lat.mass
            levels[s.j][s.k] += lat.mass
            a = _lowest_common_ancestor(r, s, self.skip)
            levels[a.j][a.k] -= lat.mass
        return levels

    def box_mass(self, q: DyadicCube, include_top: bool = False) -> float:
        """Mass of the closed Carleson box over q (boundary in the half-space counted)."""
        m = 0.0
        for v in self.verticals:
            if q.contains(v.child):
                m += v.mass
        if include_top:
            for v in self.top_terms:
                if q.contains(v.child):
                    m += v.mass
        for lat in self.laterals:
            if q.contains(lat.left) or q.contains(lat.right):
                m += lat.mass
        return m


def _lowest_common_ancestor(r: DyadicCube, s: DyadicCube, skip: int = 1) -> DyadicCube:
    j = min(r.j, s.j)
    while True:
        sh_r, sh_s = r.j - j, s.j - j
        kr = tuple(ki >> sh_r for ki in r.k)
        ks = tuple(ki >> sh_s for ki in s.k)
        if kr == ks:
            return DyadicCube(r.n, j, kr)
        j -= skip
        if j < 0:
            raise ValueError("cubes share no ancestor")


def carleson_of_gradient(mu: JumpMeasure, mode: str = "dyadic",
                         include_top: bool = False) -> GridFunction:
    """C mu(x) = sup over boxes containing x of the normalized closed-box mass.

    dyadic: supremum over the (skip-)dyadic ancestors.  brute (n=1 only):
    supremum over all intervals with endpoints on the 2^-J grid; interfaces
    partially inside a box count in proportion to the overlapping area.
    """
    n, J, skip = mu.n, mu.J, mu.skip
    if mode == "dyadic":
        levels = mu._attribution_levels(include_top)
        gens = sorted(levels)
        acc = None
        sub = {}
        for j in reversed(gens):
            term = levels[j]
            if acc is None:
                acc = term.copy()
            else:
                fine = acc
                for _ in range(skip):
                    if n == 1:
                        fine = fine.reshape(-1, 2).sum(axis=1)
                    else:
                        m2 = fine.shape[0] // 2
                        fine = fine.reshape(m2, 2, m2, 2).sum(axis=(1, 3))
                acc = term + fine
            sub[j] = acc
        run = sub[gens[0]] / 2.0 ** (-n * gens[0])
        for j in gens[1:]:
            run = np.maximum(sub[j] / 2.0 ** (-n * j), _upsample(run, n, 2**skip))
        if gens[-1] != J:
            run = _upsample(run, n, 2 ** (J - gens[-1]))
        return GridFunction(n, J, run)

    if mode != "brute":
        raise ValueError(f"unknown mode {mode!r}")
    if n != 1:
        raise ValueError("brute mode requires n = 1")
    ncells = 2**J
    h = 2.0 ** (-J)
    verts = list(mu.verticals) + (list(mu.top_terms) if include_top else [])
    best = np.zeros(ncells)
    for m in range(1, ncells + 1):
        li = m * h
        # density of vertical interfaces visible at this box height, per cell
        dens = np.zeros(ncells)
        for v in verts:
            if v.t <= li + 1e-15:
                lo = v.child.k[0] * 2 ** (J - v.child.j)
                hi = (v.child.k[0] + 1) * 2 ** (J - v.child.j)
                dens[lo:hi] += v.mass / (hi - lo)
        csum = np.concatenate([[0.0], np.cumsum(dens)])
        box = csum[m:] - csum[:-m]
        # lateral interfaces at grid point p count for starts a with a <= p <= a+m
        latmass = np.zeros(ncells + 1)
        for lat in mu.laterals:
            p = int(round(lat.axis_position / h))
            frac = max(0.0, min(lat.t_hi, li) - lat.t_lo) / (lat.t_hi - lat.t_lo)
            latmass[p] += lat.mass * frac
        lsum = np.concatenate([[0.0], np.cumsum(latmass)])
        starts = np.arange(ncells - m + 1)
        box = box + (lsum[starts + m + 1] - lsum[starts])
        box /= li
        best = np.maximum(best, _covering_max(box, m, ncells))
    return GridFunction(1, J, best)


# ---------------------------------------------------------------------------
# serialization


def save_grid_function(g: GridFunction, path) -> None:
    """Text format: header line 'n J', then 2^nJ values in lexicographic order."""
    with open(path, "w") as fh:
        fh.write(f"{g.n} {g.J}\n")
        flat = g.values.reshape(-1)
        fh.write(" ".join(repr(float(v)) for v in flat))
        fh.write("\n")


def load_grid_function(path) -> GridFunction:
    with open(path) as fh:
        header = fh.readline().split()
        n, J = int(header[0]), int(header[1])
        vals = np.array([float(t) for t in fh.read().split()])
    return GridFunction(n, J, vals.reshape((2**J,) * n))


def save_whitney_function(f: WhitneyFunction, path) -> None:
    """Header 'n J skip', then one line 'j k value' per cube (k lexicographic flat index)."""
    with open(path, "w") as fh:
        fh.write(f"{f.n} {f.J} {f.skip}\n")
        for j in f.generations:
            flat = f.levels[j].reshape(-1)
            for k, v in enumerate(flat):
                fh.write(f"{j} {k} {float(v)!r}\n")


def load_whitney_function(path) -> WhitneyFunction:
    with open(path) as fh:
        n, J, skip = (int(t) for t in fh.readline().split())
        levels = {j: np.zeros((2**j,) * n) for j in range(0, J + 1, skip)}
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            j, k, v = int(parts[0]), int(parts[1]), float(parts[2])
            levels[j].reshape(-1)[k] = v
    return WhitneyFunction(n, J, levels, skip)
