"""Stopping families on the skip grid: principal, stopping, oscillation cubes.

The generic two-rule construction: starting from an initial collection,
add every cube whose criterion fires against some member containing it,
unless an intermediate member or an intermediate firing cube blocks it.
Processing generations top-down against the currently owning member
realizes exactly this; a literal fixpoint oracle is provided for tests.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..cubes import DyadicCube, GeometryConfig, SkipGrid, all_cubes, unit_cube
from ..functionals import _upsample
from ..martingale import _decode, _encode, _owner_codes
from .lattice import SampleSet

__all__ = [
    "SkipStoppingFamily",
    "UncoveredReport",
    "build_skip_family",
    "build_family_oracle",
    "build_principal",
    "build_stopping",
    "build_oscillation",
    "uncovered_filter",
    "carleson_packing",
    "carleson_packing_direct",
]


@dataclass
class SkipStoppingFamily:
    """A stopping family over the skip grid with its pi map and certificates.

    owners[j] maps every admissible cube to the code of the smallest member
    containing it.  owner_payload holds, per generation, the payload values
    (e.g. corkscrew value of the owning member) used by the criterion; for
    the stopping family these arrays are the sawtooth-constant approximant.
    """

    grid: SkipGrid
    role: str
    members: list[DyadicCube]
    parent: dict[DyadicCube, DyadicCube]
    generation: dict[DyadicCube, int]
    owners: dict[int, np.ndarray] = field(repr=False, default_factory=dict)
    owner_payload: dict[str, dict[int, np.ndarray]] = field(repr=False, default_factory=dict)
    certificates: dict[DyadicCube, tuple[float, float]] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return 1

    def __contains__(self, q: DyadicCube) -> bool:
        return q in self.parent

    def __len__(self) -> int:
        return len(self.members)

    def member_set(self) -> set[DyadicCube]:
        return set(self.members)

    def owner(self, q: DyadicCube) -> DyadicCube:
        return _decode(int(self.owners[q.j][q.k]), q.n)

    def pi(self, q: DyadicCube) -> DyadicCube:
        """Smallest member strictly containing q (q itself at the top)."""
        if q.j == 0:
            return q
        jj = q.j - self.grid.skip
        up = DyadicCube(q.n, jj, tuple(k >> self.grid.skip for k in q.k))
        return _decode(int(self.owners[jj][up.k]), q.n)

    def children_of(self, q: DyadicCube) -> list[DyadicCube]:
        return [m for m in self.members if m != q and self.parent[m] == q]

    def member_masks(self) -> dict[int, np.ndarray]:
        masks = {j: np.zeros((2**j,), dtype=bool) for j in self.grid.generations}
        for q in self.members:
            masks[q.j][q.k] = True
        return masks


def build_skip_family(grid: SkipGrid, role: str, payloads: dict[str, dict[int, np.ndarray]],
                      crit, initial_masks: dict[int, np.ndarray] | None = None,
                      n: int = 1) -> SkipStoppingFamily:
    """Top-down sweep: a cube joins when the criterion fires against its owner.

    crit(j, payloads_at_j, owner_payloads_at_j) returns the firing mask for
    generation j.  Initial-collection members join unconditionally.
    """
    gens = grid.generations
    skip = grid.skip
    factor = 2**skip
    owner_code = {0: _owner_codes(n, 0)}
    owner_pay = {name: {0: payloads[name][0].copy()} for name in payloads}
    fired = {0: np.ones((1,) * n, dtype=bool)}
    gen_idx = {0: np.zeros((1,) * n, dtype=np.int64)}
    for j in gens[1:]:
        pj = j - skip
        pc = _upsample(owner_code[pj], n, factor)
        pg = _upsample(gen_idx[pj], n, factor)
        own_at_j = {name: _upsample(owner_pay[name][pj], n, factor) for name in payloads}
        hit = crit(j, {name: payloads[name][j] for name in payloads}, own_at_j)
        if initial_masks is not None and j in initial_masks:
            hit = hit | initial_masks[j]
        fired[j] = hit
        codes = _owner_codes(n, j)
        owner_code[j] = np.where(hit, codes, pc)
        gen_idx[j] = np.where(hit, pg + 1, pg)
        for name in payloads:
            owner_pay[name][j] = np.where(hit, payloads[name][j], own_at_j[name])
    top = unit_cube(n)
    members, parent, generation = [top], {top: top}, {top: 0}
    for j in gens[1:]:
        pj = j - skip
        for k in np.argwhere(fired[j]):
            kk = tuple(int(v) for v in k)
            q = DyadicCube(n, j, kk)
            up = tuple(v >> skip for v in kk)
            par = _decode(int(owner_code[pj][up]), n)
            members.append(q)
            parent[q] = par
            generation[q] = int(gen_idx[j][kk])
    return SkipStoppingFamily(grid, role, members, parent, generation,
                              owner_code, owner_pay)


def build_family_oracle(grid: SkipGrid, crit_pair, initial: set[DyadicCube],
                        n: int = 1) -> set[DyadicCube]:
    """Literal fixpoint of the two membership rules (slow; for tests).

    A cube F' is added when the criterion holds against some member F
    containing it strictly, and no strictly intermediate cube blocks it by
    being a member or by firing against the same F.
    """
    cubes = all_cubes(n, grid.base, grid.skip)
    fam = set(initial)
    changed = True
    while changed:
        changed = False
        for fp in cubes:
            if fp in fam:
                continue
            for f in fam:
                if not (f.contains(fp) and f != fp):
                    continue
                if not crit_pair(fp, f):
                    continue
                blocked = False
                for mid in cubes:
                    if mid == fp or mid == f:
                        continue
                    if mid.contains(fp) and f.contains(mid):
                        if mid in fam or crit_pair(mid, f):
                            blocked = True
                            break
                if not blocked:
                    fam.add(fp)
                    changed = True
                    break
    return fam


def build_principal(samples: SampleSet, a_thresh: float = 2.0) -> SkipStoppingFamily:
    """Principal cubes: stop when the truncated maximal of Nu jumps by A.

    Certificates record, per member Q, (sum of the volumes of its family
    children, |Q| / A): sparseness from the weak (1,1) maximal estimate.
    """
    if a_thresh <= 1:
        raise ValueError("the principal threshold must exceed 1")
    grid = samples.grid
    mt_list = samples.mt_nu_levels()
    mt = {j: mt_list[i] for i, j in enumerate(grid.generations)}

    def crit(j, pay, own):
        return pay["mt"] > a_thresh * own["mt"]

    fam = build_skip_family(grid, "principal", {"mt": mt}, crit)
    for q in fam.members:
        vol = sum(c.volume for c in fam.children_of(q))
        fam.certificates[q] = (vol, q.volume / a_thresh)
    return fam


def build_stopping(samples: SampleSet, principal: SkipStoppingFamily,
                   eps: float) -> SkipStoppingFamily:
    """Stopping cubes: corkscrew values deviate from the owning member's.

    Initial collection is the principal family.  Requires the corkscrew
    height parameter eta to satisfy eta^alpha_reg <= eps / 10, the concrete
    form of the interior-regularity smallness hypothesis.
    """
    cfg = samples.cfg
    if cfg.eta ** cfg.alpha_reg > eps / 10 + 1e-12:
        raise ValueError(
            f"eta={cfg.eta:g} too large for eps={eps:g}: need eta^alpha <= eps/10")
    grid = samples.grid
    mt_list = samples.mt_nu_levels()
    mt = {j: mt_list[i] for i, j in enumerate(grid.generations)}
    cork = samples.cork

    def crit(j, pay, own):
        return np.abs(pay["cork"] - own["cork"]) > eps * pay["mt"]

    return build_skip_family(grid, "stopping", {"mt": mt, "cork": cork}, crit,
                             initial_masks=principal.member_masks())


def build_oscillation(samples: SampleSet, eps: float) -> set[DyadicCube]:
    """Cubes whose sampled Whitney oscillation exceeds eps M(Nu); no recursion."""
    grid = samples.grid
    osc = samples.osc_levels()
    mt_list = samples.mt_nu_levels()
    out: set[DyadicCube] = set()
    for i, j in enumerate(grid.generations):
        mask = osc[j] > eps * mt_list[i]
        for k in np.argwhere(mask):
            out.add(DyadicCube(1, j, tuple(int(v) for v in k)))
    return out


# ---------------------------------------------------------------------------
# covered / uncovered filtering (the Vitali-type volume inequality)


@dataclass
class UncoveredReport:
    selected: list[DyadicCube]          # centred and uncovered
    centred: list[DyadicCube]
    chains: dict[DyadicCube, list[DyadicCube]]
    total_volume: float
    boundary_volume: float              # members in the margin strip
    selected_volume: float
    measured_tau: float
    measured_c: float


def _covers(qpp: DyadicCube, qp: DyadicCube, delta: float) -> bool:
    # Q'' covers Q' when l(Q'') - dist/delta exceeds l(Q'); adjacency included
    return qpp.length - qp.dist(qpp) / delta > qp.length


def uncovered_filter(members: list[DyadicCube], q: DyadicCube,
                     cfg: GeometryConfig) -> UncoveredReport:
    """Select the centred, uncovered members and measure the volume inequality.

    Centred means contained in the concentric (1 - 2 m delta) shrinking of
    q; uncovered means no member shadows it within slope 1/delta.  Every
    covered member reaches an uncovered one through a covering chain with
    geometrically increasing side lengths.
    """
    members = list(members)
    for a in members:
        if not q.contains(a):
            raise ValueError(f"{a} not inside {q}")
    for i, a in enumerate(members):
        for b in members[i + 1:]:
            if a.contains(b) or b.contains(a):
                raise ValueError("members must be pairwise disjoint")
    delta = cfg.delta
    shrink = 1 - 2 * cfg.margin * delta
    lo = [c - shrink * q.length / 2 for c in q.center()]
    hi = [c + shrink * q.length / 2 for c in q.center()]
    centred, boundary = [], []
    for a in members:
        inside = all(l - 1e-12 <= al and ah <= h + 1e-12
                     for l, h, al, ah in zip(lo, hi, a.lower(), a.upper()))
        (centred if inside else boundary).append(a)

    uncovered = []
    coverer: dict[DyadicCube, DyadicCube] = {}
    for a in members:
        cands = [b for b in members if b != a and _covers(b, a, delta)]
        if not cands:
            uncovered.append(a)
        else:
            coverer[a] = max(cands, key=lambda b: b.length - a.dist(b) / delta)
    unc_set = set(uncovered)
    chains: dict[DyadicCube, list[DyadicCube]] = {}
    for a in members:
        chain = [a]
        cur = a
        while cur not in unc_set:
            nxt = coverer[cur]
            if nxt.length <= cur.length:
                raise RuntimeError("covering chain failed to increase in scale")
            chain.append(nxt)
            cur = nxt
        chains[a] = chain

    selected = [a for a in centred if a in unc_set]
    total = sum(a.volume for a in members)
    bvol = sum(a.volume for a in boundary)
    svol = sum(a.volume for a in selected)
    tau = bvol / q.volume
    c_meas = max(0.0, total - bvol) / svol if svol > 0 else 0.0
    return UncoveredReport(selected, centred, chains, total, bvol, svol, tau, c_meas)


# ---------------------------------------------------------------------------
# Carleson packing


def carleson_packing(members, grid: SkipGrid, n: int = 1) -> float:
    """sup over skip cubes Q of |Q|^-1 sum of member volumes inside Q."""
    gens = grid.generations
    levels = {j: np.zeros((2**j,) * n) for j in gens}
    for q in members:
        levels[q.j][q.k] += q.volume
    best = 0.0
    acc = None
    for j in reversed(gens):
        term = levels[j]
        if acc is None:
            acc = term.copy()
        else:
            fine = acc
            for _ in range(grid.skip):
                if n == 1:
                    fine = fine.reshape(-1, 2).sum(axis=1)
                else:
                    m2 = fine.shape[0] // 2
                    fine = fine.reshape(m2, 2, m2, 2).sum(axis=(1, 3))
            acc = term + fine
        best = max(best, float((acc / 2.0 ** (-n * j)).max()))
    return best


def carleson_packing_direct(members, grid: SkipGrid, n: int = 1) -> float:
    """O(N^2) packing oracle."""
    best = 0.0
    for q in all_cubes(n, grid.base, grid.skip):
        s = sum(m.volume for m in members if q.contains(m))
        best = max(best, s / q.volume)
    return best
