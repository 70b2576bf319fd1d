"""Stopping-time approximation of the dyadic average extension.

Given mean-zero boundary data g, the dyadic average extension u is replaced
by a sawtooth-constant approximant f built by stopping at the maximal cubes
R with |u_R - u_Q| >= eps * M_D g(R).  The construction guarantees
N_D(f - u) <= eps * M_D g pointwise, while the Carleson functional of the
gradient of f stays under control.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cubes import DyadicCube, all_cubes, children, same_scale_neighbors, unit_cube
from .functionals import (
    GridFunction,
    JumpMeasure,
    LateralJump,
    VerticalJump,
    WhitneyFunction,
    carleson_of_gradient,
    level_averages,
    lp_norm,
    maximal_dyadic,
    nontangential_max_dyadic,
    truncated_maximal_levels,
    _upsample,
)

__all__ = [
    "StoppingFamily",
    "ApproximationReport",
    "dyadic_average_extension",
    "localize",
    "stopping_children",
    "build_generations",
    "build_generations_bruteforce",
    "build_approximant",
    "gradient_measure",
    "lemma32_report",
    "lacunary_function",
]


@dataclass
class StoppingFamily:
    """Generations of stopping cubes under the top cube, with the pi map.

    owners[j] holds, for every generation-j cube, the flat code of the
    smallest member containing it; codes are (level << 32) | flat index.
    sawtooth regions are recovered from ownership: W_R lies in Omega(Q)
    exactly when Q is the smallest member containing R.
    """

    n: int
    J: int
    members: list[DyadicCube]
    parent: dict[DyadicCube, DyadicCube]
    generation: dict[DyadicCube, int]
    owners: dict[int, np.ndarray] = field(repr=False, default_factory=dict)
    skip: int = 1

    def __contains__(self, q: DyadicCube) -> bool:
        return q in self.parent

    def __len__(self) -> int:
        return len(self.members)

    def owner(self, q: DyadicCube) -> DyadicCube:
        """The smallest member containing q (q itself if q is a member)."""
        code = int(self.owners[q.j][q.k])
        return _decode(code, self.n)

    def pi(self, q: DyadicCube) -> DyadicCube:
        """Stopping parent: smallest member strictly containing q; top maps to itself."""
        if q.j == 0:
            return q
        jj = q.j - self.skip
        up = DyadicCube(q.n, jj, tuple(ki >> self.skip for ki in q.k))
        return _decode(int(self.owners[jj][up.k]), self.n)

    def members_by_generation(self) -> dict[int, list[DyadicCube]]:
        out: dict[int, list[DyadicCube]] = {}
        for q in self.members:
            out.setdefault(self.generation[q], []).append(q)
        return out

    def sawtooth(self, q: DyadicCube) -> list[DyadicCube]:
        """Cubes R whose Whitney region lies in the sawtooth Omega(q)."""
        code = _encode(q)
        out = []
        for j in sorted(self.owners):
            mask = self.owners[j] == code
            for k in np.argwhere(mask):
                out.append(DyadicCube(self.n, j, tuple(int(v) for v in k)))
        return out


def _encode(q: DyadicCube) -> int:
    flat = 0
    for ki in q.k:
        flat = (flat << 20) | ki
    return (q.j << 45) | flat


def _decode(code: int, n: int) -> DyadicCube:
    j = code >> 45
    flat = code & ((1 << 45) - 1)
    ks = []
    for _ in range(n):
        ks.append(flat & ((1 << 20) - 1))
        flat >>= 20
    return DyadicCube(n, j, tuple(reversed(ks)))


def _owner_codes(n: int, j: int) -> np.ndarray:
    if n == 1:
        return (j << 45) | np.arange(2**j, dtype=np.int64)
    r = np.arange(2**j, dtype=np.int64)
    return (j << 45) | ((r[:, None] << 20) | r[None, :])


def dyadic_average_extension(g: GridFunction) -> WhitneyFunction:
    """u_Q = avg_Q g on every admissible cube."""
    levels = level_averages(g)
    return WhitneyFunction(g.n, g.J, {j: levels[j] for j in range(g.J + 1)})


def localize(g: GridFunction) -> tuple[GridFunction, GridFunction, WhitneyFunction]:
    """Split g = g1 + g2 with g2 the top-cube average and g1 mean zero.

    The approximation f2 of the extension of g2 is the constant avg(g) on
    the whole box above the top cube; it has no interior jumps.
    """
    m = g.mean()
    g1 = GridFunction(g.n, g.J, g.values - m)
    g2 = GridFunction(g.n, g.J, np.full_like(g.values, m))
    f2 = WhitneyFunction.constant(g.n, g.J, m)
    return g1, g2, f2


def stopping_children(q: DyadicCube, u: WhitneyFunction, g: GridFunction,
                      eps: float) -> set[DyadicCube]:
    """Maximal strict descendants R of q with |u_R - u_q| >= eps * M_D g(R)."""
    mt = truncated_maximal_levels(g)
    uq = u[q]
    out: set[DyadicCube] = set()

    def descend(r: DyadicCube):
        for c in children(r, g.J):
            if abs(u[c] - uq) >= eps * float(mt[c.j][c.k]):
                out.add(c)
            elif c.j < g.J:
                descend(c)

    if q.j < g.J:
        descend(q)
    return out


def _family_levels(g: GridFunction, eps: float):
    """Vectorized top-down construction of the stopping generations.

    Processing generations top-down, a cube fires exactly when it deviates
    from the value of the member currently owning it, which reproduces the
    recursive maximal-descendant selection.
    """
    u = level_averages(g)
    mt = truncated_maximal_levels(g)
    n, J = g.n, g.J
    fired = {0: np.ones((1,) * n, dtype=bool)}
    owner_val = {0: u[0].copy()}
    owner_code = {0: _owner_codes(n, 0)}
    gen = {0: np.zeros((1,) * n, dtype=np.int64)}
    for j in range(1, J + 1):
        pv = _upsample(owner_val[j - 1], n)
        pc = _upsample(owner_code[j - 1], n)
        pg = _upsample(gen[j - 1], n)
        hit = np.abs(u[j] - pv) >= eps * mt[j]
        fired[j] = hit
        owner_val[j] = np.where(hit, u[j], pv)
        owner_code[j] = np.where(hit, _owner_codes(n, j), pc)
        gen[j] = np.where(hit, pg + 1, pg)
    return u, fired, owner_val, owner_code, gen


def build_generations(g: GridFunction, eps: float) -> StoppingFamily:
    """All generations omega_* of stopping cubes under the top cube."""
    if abs(g.mean()) > 1e-9 * (1 + np.abs(g.values).max()):
        raise ValueError("stopping construction expects mean-zero data; localize first")
    n, J = g.n, g.J
    _, fired, _, owner_code, gen = _family_levels(g, eps)
    members, parent, generation = [], {}, {}
    top = unit_cube(n)
    members.append(top)
    parent[top] = top
    generation[top] = 0
    for j in range(1, J + 1):
        idx = np.argwhere(fired[j])
        for k in idx:
            kk = tuple(int(v) for v in k)
            q = DyadicCube(n, j, kk)
            up = DyadicCube(n, j - 1, tuple(v >> 1 for v in kk))
            par = _decode(int(owner_code[j - 1][up.k]), n)
            members.append(q)
            parent[q] = par
            generation[q] = int(gen[j][kk])
    return StoppingFamily(n, J, members, parent, generation, owner_code)


def build_generations_bruteforce(g: GridFunction, eps: float) -> StoppingFamily:
    """Definitional oracle: recompute omega(Q) for every member by recursion."""
    u = dyadic_average_extension(g)
    top = unit_cube(g.n)
    members, parent, generation = [top], {top: top}, {top: 0}
    frontier = [top]
    while frontier:
        q = frontier.pop()
        for r in stopping_children(q, u, g, eps):
            members.append(r)
            parent[r] = q
            generation[r] = generation[q] + 1
            frontier.append(r)
    owners = {0: _owner_codes(g.n, 0)}
    member_set = set(members)
    for j in range(1, g.J + 1):
        up = _upsample(owners[j - 1], g.n)
        codes = _owner_codes(g.n, j)
        mask = np.zeros((2**j,) * g.n, dtype=bool)
        for q in member_set:
            if q.j == j:
                mask[q.k] = True
        owners[j] = np.where(mask, codes, up)
    return StoppingFamily(g.n, g.J, members, parent, generation, owners)


@dataclass
class ApproximationReport:
    """Pointwise and L_p diagnostics for one approximant build."""

    eps: float
    closeness_ratio: float          # max N_D(f-u) / M_D g; <= eps by construction
    carleson_t_ratio: float         # max C_D(d_t f) / (eps^-1 M_D M_D g)
    carleson_full_ratio: float      # same with the full gradient
    top_jump_mass: float            # |f| jump at the top of the domain box, reported apart
    norms: dict[float, dict[str, float]] = field(default_factory=dict)


def build_approximant(g: GridFunction, eps: float,
                      p_values: tuple[float, ...] = (2.0,)) -> tuple[
                          WhitneyFunction, StoppingFamily, ApproximationReport]:
    """The sawtooth approximant f of the dyadic average extension of g.

    f is constant equal to u_Q on each sawtooth Omega(Q); the stopping
    inequality makes N_D(f-u) <= eps * M_D g hold at every grid cell.
    """
    fam = build_generations(g, eps)
    u_levels, _, owner_val, _, _ = _family_levels(g, eps)
    n, J = g.n, g.J
    f = WhitneyFunction(n, J, {j: owner_val[j] for j in range(J + 1)})
    u = WhitneyFunction(n, J, {j: u_levels[j] for j in range(J + 1)})

    mdg = maximal_dyadic(g)
    nd = nontangential_max_dyadic(f - u)
    with np.errstate(invalid="ignore", divide="ignore"):
        rati = np.where(mdg.values > 0, nd.values / mdg.values, 0.0)
    closeness = float(rati.max())

    mu = gradient_measure(f)
    mmg = maximal_dyadic(maximal_dyadic(g))
    cdt = _carleson_vertical(f)
    with np.errstate(invalid="ignore", divide="ignore"):
        rt = np.where(mmg.values > 0, cdt.values * eps / mmg.values, 0.0)
    cfull = carleson_of_gradient(mu, "dyadic")
    with np.errstate(invalid="ignore", divide="ignore"):
        rf = np.where(mmg.values > 0, cfull.values * eps / mmg.values, 0.0)

    norms = {}
    for p in p_values:
        norms[p] = {
            "g": lp_norm(g, p),
            "N(f-u)": lp_norm(nd, p),
            "C(dt f)": lp_norm(cdt, p),
            "C(grad f)": lp_norm(cfull, p),
            "M_D g": lp_norm(mdg, p),
        }
    report = ApproximationReport(eps, closeness, float(rt.max()), float(rf.max()),
                                 mu.total_top(), norms)
    return f, fam, report


def _carleson_vertical(f: WhitneyFunction) -> GridFunction:
    """C_D of the d_t part of grad f, by direct level arithmetic."""
    n, J = f.n, f.J
    gens = f.generations
    factor = 2**f.skip
    vmass = {gens[0]: np.zeros((2 ** gens[0],) * n)}
    for prev, j in zip(gens, gens[1:]):
        vmass[j] = np.abs(f.levels[j] - _upsample(f.levels[prev], n, factor)) * 2.0 ** (-n * j)
    acc = None
    sums = {}
    for j in reversed(gens):
        term = vmass[j]
        if acc is None:
            acc = term.copy()
        else:
            fine = acc
            for _ in range(f.skip):
                if n == 1:
                    fine = fine.reshape(-1, 2).sum(axis=1)
                else:
                    m2 = fine.shape[0] // 2
                    fine = fine.reshape(m2, 2, m2, 2).sum(axis=(1, 3))
            acc = term + fine
        sums[j] = acc
    run = sums[gens[0]] / 2.0 ** (-n * gens[0])
    for j in gens[1:]:
        run = np.maximum(sums[j] / 2.0 ** (-n * j), _upsample(run, n, factor))
    if gens[-1] != J:
        run = _upsample(run, n, 2 ** (J - gens[-1]))
    return GridFunction(n, J, run)


def gradient_measure(f: WhitneyFunction) -> JumpMeasure:
    """grad f of a Whitney-constant f as an interface measure.

    Vertical terms across every parent-child Whitney interface (mass
    |f_child - f_parent| * |child|), lateral terms across every shared
    same-generation face.  The bottom of the truncated slab contributes
    nothing; the jump at the top of the domain box goes to top_terms.
    """
    n, J, skip = f.n, f.J, f.skip
    mu = JumpMeasure(n, J, skip)
    gens = f.generations
    factor = 2**skip
    for prev, j in zip(gens, gens[1:]):
        diff = np.abs(f.levels[j] - _upsample(f.levels[prev], n, factor))
        vol = 2.0 ** (-n * j)
        for k in np.argwhere(diff != 0):
            kk = tuple(int(v) for v in k)
            child = DyadicCube(n, j, kk)
            par = DyadicCube(n, prev, tuple(v >> skip for v in kk))
            mu.verticals.append(VerticalJump(par, child, float(diff[kk]) * vol))
    # lateral: shared faces of same-generation cubes; height of the shared
    # interface is the full Whitney height (1 - delta) * l
    for j in gens:
        arr = f.levels[j]
        l = 2.0 ** (-j)
        height = (1.0 - f.delta) * l
        t_lo, t_hi = f.delta * l, l
        face = l ** (n - 1)
        for ax in range(n):
            d = np.abs(np.diff(arr, axis=ax))
            for k in np.argwhere(d != 0):
                kk = tuple(int(v) for v in k)
                left = DyadicCube(n, j, kk)
                rk = tuple(v + (1 if a == ax else 0) for a, v in enumerate(kk))
                right = DyadicCube(n, j, rk)
                mu.laterals.append(LateralJump(left, right,
                                               float(d[kk]) * face * height, t_lo, t_hi))
    top_val = abs(float(f.levels[0].reshape(-1)[0]))
    if top_val != 0:
        top = unit_cube(n)
        mu.top_terms.append(VerticalJump(top, top, top_val * 1.0))
    return mu


def lemma32_report(f: WhitneyFunction, q: DyadicCube) -> tuple[float, float, float]:
    """(lateral, vertical, boundary) masses for the tangential gradient bound.

    lateral and vertical are the masses of the respective parts of grad f
    in the closed Carleson box over q; boundary is |Q| times the sum of
    |f| over the same-scale neighbors of q.
    """
    mu = gradient_measure(f)
    lat = sum(l.mass for l in mu.laterals if q.contains(l.left) or q.contains(l.right))
    vert = sum(v.mass for v in mu.verticals if q.contains(v.child))
    nb = sum(abs(f[r]) for r in same_scale_neighbors(q))
    return lat, vert, q.volume * nb


def lacunary_function(k: int, J: int) -> tuple[GridFunction, dict]:
    """The lacunary sum of Haar-type bumps over generations 0..k (n=1).

    g(x) = sum over dyadic Q in [0,1) with l(Q) >= 2^-k of
    (1 on the left child of Q, -1 on the right child).  Its squared L_2
    norm is exactly k+1, while the Carleson functional of the gradient of
    the dyadic average extension grows linearly in k at every point.
    """
    if k >= J:
        raise ValueError(f"need k < J so that generation k+1 exists; got k={k}, J={J}")
    cells = np.arange(2**J)
    vals = np.zeros(2**J)
    for j in range(k + 1):
        bit = (cells >> (J - j - 1)) & 1
        vals += np.where(bit == 0, 1.0, -1.0)
    g = GridFunction(1, J, vals)
    u = dyadic_average_extension(g)
    mu = gradient_measure(u)
    c = carleson_of_gradient(mu, "dyadic")
    report = {
        "k": k,
        "l2_sq": lp_norm(g, 2.0) ** 2,
        "min_carleson": float(c.values.min()),
        "ratio_min_c_over_k": float(c.values.min()) / k if k > 0 else float("inf"),
    }
    return g, report
