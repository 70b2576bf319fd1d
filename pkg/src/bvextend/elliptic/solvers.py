"""Solution backends for div A grad u = 0 on the unit slab (n = 1 main case).

Both backends solve the same boundary value problem on (0,1) x [0,1):
Dirichlet data g at the bottom, homogeneous co-normal flux on the lateral
sides, Dirichlet equal to avg(g) on the top.

The harmonic backend (A = I) is exact: even reflection makes the lateral
condition automatic, the half-plane Poisson kernel of the periodized data
has a closed-form antiderivative, and a fast-converging cosine series
corrects the top boundary.  The fd backend handles full, possibly
non-symmetric coefficient matrices by a finite-volume scheme that is exact
on affine functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ..functionals import GridFunction

__all__ = [
    "EllipticCoefficients",
    "PoissonSolution",
    "Poisson2dSolution",
    "FdSolution",
    "solve_poisson",
    "solve_fd",
]

_TOP_CORRECTION_MODES = 48


# ---------------------------------------------------------------------------
# closed-form periodic Poisson kernel machinery (n = 1)
#
# P_per(t, z) = sinh(pi t) / (2 (cosh(pi t) - cos(pi z)))  has period 2 in z
# and unit mass over one period; its antiderivative in z is
# F(t, z) = round(z/2) + arctan(coth(pi t / 2) tan(pi w / 2)) / pi,
# w = z - 2 round(z/2), increasing and continuous with F(z+2) = F(z) + 1.


def _kernel_antiderivative(t: float, z: np.ndarray) -> np.ndarray:
    half = np.round(z / 2.0)
    w = z - 2.0 * half
    c = np.cosh(np.pi * t / 2.0) / np.sinh(np.pi * t / 2.0)
    return half + np.arctan(c * np.tan(np.pi * w / 2.0)) / np.pi


def _kernel_density(t: float, z: np.ndarray) -> np.ndarray:
    return np.sinh(np.pi * t) / (2.0 * (np.cosh(np.pi * t) - np.cos(np.pi * z)))


def _kernel_dt_antiderivative(t: float, z: np.ndarray) -> np.ndarray:
    # t-derivative of the antiderivative; no branch bookkeeping needed
    return -np.sin(np.pi * z) / (2.0 * (np.cosh(np.pi * t) - np.cos(np.pi * z)))


@dataclass
class PoissonSolution:
    """Exact harmonic extension of grid data in the slab (n = 1).

    u = mean(g) + (periodized even half-plane extension of g - mean)
      - (top correction making u = mean(g) at t = 1).
    """

    g: GridFunction
    backend: str = "poisson"
    _coeff: np.ndarray = field(init=False, repr=False)
    _bk: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.g.n != 1:
            raise ValueError("PoissonSolution is one-dimensional; use solve_poisson for n=2")
        gt = self.g.values - self.g.mean()
        # jump coefficients at the cell boundaries i*h, i = 0..B
        c = np.zeros(len(gt) + 1)
        c[0] = gt[0]
        c[1:-1] = gt[1:] - gt[:-1]
        c[-1] = -gt[-1]
        self._coeff = c
        ks = np.arange(1, _TOP_CORRECTION_MODES + 1)
        h = 2.0 ** (-self.g.J)
        bounds = np.arange(len(gt) + 1) * h
        sines = np.sin(np.pi * ks[:, None] * bounds[None, :])
        self._bk = 2.0 * ((sines[:, 1:] - sines[:, :-1]) * gt[None, :]).sum(axis=1) / (np.pi * ks)

    @property
    def J(self) -> int:
        return self.g.J

    # -- top correction series (geometrically convergent for all t in [0,1])

    def _corr_env(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        ks = np.arange(1, _TOP_CORRECTION_MODES + 1)
        pk = np.pi * ks
        env = np.exp(pk * (t - 2.0)) * (1.0 - np.exp(-2.0 * pk * t)) / (1.0 - np.exp(-2.0 * pk))
        denv = pk * np.exp(pk * (t - 2.0)) * (1.0 + np.exp(-2.0 * pk * t)) / (1.0 - np.exp(-2.0 * pk))
        return env, denv

    def _corr(self, t: float, x: np.ndarray) -> np.ndarray:
        env, _ = self._corr_env(t)
        ks = np.arange(1, _TOP_CORRECTION_MODES + 1)
        return (self._bk * env) @ np.cos(np.pi * np.outer(ks, x))

    def _corr_grad(self, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        env, denv = self._corr_env(t)
        ks = np.arange(1, _TOP_CORRECTION_MODES + 1)
        ang = np.pi * np.outer(ks, x)
        dt = (self._bk * denv) @ np.cos(ang)
        dx = -(self._bk * env * np.pi * ks) @ np.sin(ang)
        return dt, dx

    # -- evaluation

    def _hp_sum(self, table_fn, t: float, x: np.ndarray) -> np.ndarray:
        h = 2.0 ** (-self.g.J)
        bounds = np.arange(len(self._coeff)) * h
        out = np.zeros(len(x))
        chunk = max(1, 2**22 // len(self._coeff))
        for s in range(0, len(x), chunk):
            xs = x[s:s + chunk, None]
            out[s:s + chunk] = (self._coeff[None, :] *
                                (table_fn(t, xs - bounds[None, :]) -
                                 table_fn(t, xs + bounds[None, :]))).sum(axis=1)
        return out

    def evaluate(self, t: float, x: np.ndarray) -> np.ndarray:
        """u(t, x) for one height and an arbitrary array of abscissas."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        if t <= 0:
            cells = np.minimum((np.clip(x, 0, 1 - 1e-15) * 2**self.J).astype(int),
                               2**self.J - 1)
            return self.g.values[cells]
        return self.g.mean() + self._hp_sum(_kernel_antiderivative, t, x) - self._corr(t, x)

    def evaluate_row(self, t: float, x0: float, dx: float, count: int) -> np.ndarray:
        """u(t, x0 + q dx), q = 0..count-1, via FFT on a common dyadic grid."""
        if t <= 0:
            return self.evaluate(t, x0 + dx * np.arange(count))
        v = self._row_fft(_kernel_antiderivative, t, x0, dx, count)
        return v + self.g.mean() - self._corr(t, x0 + dx * np.arange(count))

    def gradient(self, t: float, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(du/dt, du/dx) at one height."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        dt = self._hp_sum(_kernel_dt_antiderivative, t, x)
        dxv = self._hp_sum(_kernel_density, t, x)
        cdt, cdx = self._corr_grad(t, x)
        return dt - cdt, dxv - cdx

    def gradient_row(self, t: float, x0: float, dx: float, count: int) -> tuple[np.ndarray, np.ndarray]:
        xs = x0 + dx * np.arange(count)
        dt = self._row_fft(_kernel_dt_antiderivative, t, x0, dx, count)
        dxv = self._row_fft(_kernel_density, t, x0, dx, count)
        cdt, cdx = self._corr_grad(t, xs)
        return dt - cdt, dxv - cdx

    def _row_fft(self, table_fn, t: float, x0: float, dx: float, count: int) -> np.ndarray:
        from scipy.signal import fftconvolve

        h = 2.0 ** (-self.g.J)
        B = len(self._coeff) - 1
        hc = min(dx, h)
        m1 = int(round(dx / hc))
        m2 = int(round(h / hc))
        if abs(m1 * hc - dx) > 1e-14 or abs(m2 * hc - h) > 1e-14:
            return self._hp_sum(table_fn, t, x0 + dx * np.arange(count))
        if count * (B + 1) <= 2**21:
            return self._hp_sum(table_fn, t, x0 + dx * np.arange(count))
        s_min = -B * m2
        s_max = (count - 1) * m1 + B * m2
        table = table_fn(t, x0 + hc * np.arange(s_min, s_max + 1))
        cfine = np.zeros(B * m2 + 1)
        cfine[::m2] = self._coeff
        conv = fftconvolve(cfine, table)
        q = np.arange(count)
        first = conv[q * m1 - s_min]
        conv2 = fftconvolve(cfine[::-1], table)
        second = conv2[q * m1 - s_min + B * m2]
        return first - second

    def residual_probe(self, t: float, x: np.ndarray, h: float = 1e-4) -> float:
        """max |Laplacian| by central differences, a harmonicity diagnostic."""
        x = np.asarray(x, dtype=float)
        utt = (self.evaluate(t + h, x) - 2 * self.evaluate(t, x) + self.evaluate(t - h, x)) / h**2
        uxx = (self.evaluate(t, x + h) - 2 * self.evaluate(t, x) + self.evaluate(t, x - h)) / h**2
        return float(np.abs(utt + uxx).max())


@dataclass
class Poisson2dSolution:
    """Cosine-series harmonic extension for n = 2 (diagnostic depths only).

    Needs about 40 / (pi t) modes per axis at height t; evaluation raises
    if the requested height would exceed the configured mode cap.
    """

    g: GridFunction
    max_modes: int = 1024
    backend: str = "poisson"
    _bk: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.g.n != 2:
            raise ValueError("Poisson2dSolution expects n = 2 data")
        gt = self.g.values - self.g.mean()
        m = self.max_modes
        h = 2.0 ** (-self.g.J)
        bounds = np.arange(2**self.g.J + 1) * h
        ks = np.arange(m + 1)
        sines = np.sin(np.pi * ks[1:, None] * bounds[None, :])
        cell_int = np.zeros((m + 1, 2**self.g.J))
        cell_int[0] = h
        cell_int[1:] = (sines[:, 1:] - sines[:, :-1]) / (np.pi * ks[1:, None])
        proj = cell_int @ gt @ cell_int.T
        mult = np.ones(m + 1)
        mult[1:] = 2.0
        self._bk = proj * np.outer(mult, mult)
        self._bk[0, 0] = 0.0

    @property
    def J(self) -> int:
        return self.g.J

    def _mode_cut(self, t: float) -> int:
        need = int(40.0 / (np.pi * t)) + 1
        if need > self.max_modes:
            raise ValueError(
                f"height t={t:g} needs {need} modes > cap {self.max_modes}; reduce depth")
        return need

    def evaluate(self, t: float, x: np.ndarray) -> np.ndarray:
        """u(t, x) for points x of shape (npts, 2)."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        K = self._mode_cut(t)
        ks = np.arange(K + 1)
        k1, k2 = np.meshgrid(ks, ks, indexing="ij")
        norm = np.pi * np.hypot(k1, k2)
        arg1 = np.clip(norm * (1 - t), 0.0, 700.0)
        arg2 = np.clip(norm, 1e-12, 700.0)
        env = np.sinh(arg1) / np.sinh(arg2)
        env[0, 0] = 0.0
        coeff = self._bk[:K + 1, :K + 1] * env
        c1 = np.cos(np.pi * np.outer(x[:, 0], ks))
        c2 = np.cos(np.pi * np.outer(x[:, 1], ks))
        return self.g.mean() + np.einsum("pk,kl,pl->p", c1, coeff, c2)


def solve_poisson(g: GridFunction, max_modes: int = 1024):
    """Harmonic oracle for A = I: exact kernel for n=1, cosine series for n=2."""
    if g.n == 1:
        return PoissonSolution(g)
    return Poisson2dSolution(g, max_modes=max_modes)


# ---------------------------------------------------------------------------
# coefficients


_PROBE_DIRECTIONS = np.array([
    [1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0],
    [2.0, 1.0], [1.0, 2.0], [2.0, -1.0], [1.0, -2.0],
])


@dataclass
class EllipticCoefficients:
    """t-independent, possibly non-symmetric 2x2 coefficients per boundary cell (n=1).

    Entries are arrays over the 2^J boundary cells: [[a_tt, a_tx], [a_xt, a_xx]].
    """

    J: int
    a_tt: np.ndarray
    a_tx: np.ndarray
    a_xt: np.ndarray
    a_xx: np.ndarray
    n: int = 1

    def __post_init__(self):
        m = 2**self.J
        for name in ("a_tt", "a_tx", "a_xt", "a_xx"):
            arr = np.broadcast_to(np.asarray(getattr(self, name), dtype=float), (m,)).copy()
            setattr(self, name, arr)
        if self.lambda_probe() <= 0:
            raise ValueError("coefficients fail the accretivity probe")

    @staticmethod
    def identity(J: int) -> "EllipticCoefficients":
        return EllipticCoefficients(J, 1.0, 0.0, 0.0, 1.0)

    def matrices(self) -> np.ndarray:
        out = np.empty((2**self.J, 2, 2))
        out[:, 0, 0], out[:, 0, 1] = self.a_tt, self.a_tx
        out[:, 1, 0], out[:, 1, 1] = self.a_xt, self.a_xx
        return out

    def lambda_probe(self, directions: np.ndarray = _PROBE_DIRECTIONS) -> float:
        """min over cells and probe vectors v of (Av, v) / |v|^2."""
        a = self.matrices()
        v = directions / np.linalg.norm(directions, axis=1, keepdims=True)
        quad = np.einsum("pi,cij,pj->cp", v, a, v)
        return float(quad.min())

    def lambda_exact(self) -> float:
        """min eigenvalue of the symmetric part, exact per 2x2 cell."""
        tr = (self.a_tt + self.a_xx) / 2
        off = (self.a_tx + self.a_xt) / 2
        disc = np.sqrt(((self.a_tt - self.a_xx) / 2) ** 2 + off**2)
        return float((tr - disc).min())

    def norm_inf(self) -> float:
        a = self.matrices()
        return float(np.linalg.norm(a, ord=2, axis=(1, 2)).max())


# ---------------------------------------------------------------------------
# finite-volume backend


class _AffineOp:
    """Sparse operator plus constant part, for flux assembly with boundary data."""

    def __init__(self, nrows: int, ncols: int):
        self.rows: list[np.ndarray] = []
        self.cols: list[np.ndarray] = []
        self.vals: list[np.ndarray] = []
        self.const = np.zeros(nrows)
        self.shape = (nrows, ncols)

    def add(self, rows, cols, vals):
        rows, cols = np.broadcast_arrays(np.asarray(rows), np.asarray(cols))
        vals = np.broadcast_to(np.asarray(vals, dtype=float), rows.shape)
        self.rows.append(rows.ravel())
        self.cols.append(cols.ravel())
        self.vals.append(vals.ravel())

    def matrix(self) -> sp.csr_matrix:
        if not self.rows:
            return sp.csr_matrix(self.shape)
        return sp.csr_matrix(
            (np.concatenate(self.vals),
             (np.concatenate(self.rows), np.concatenate(self.cols))), shape=self.shape)


@dataclass
class FdSolution:
    """Finite-volume solution on a cell-centered mesh 2^refine times the grid.

    The derivative stencils are exact on affine functions, so affine
    solutions of the constant-coefficient equation are reproduced to
    solver precision.
    """

    g: GridFunction
    coeffs: EllipticCoefficients
    refine: int = 1
    top_data: np.ndarray | float | None = None
    backend: str = "fd"
    mesh: np.ndarray = field(init=False, repr=False)
    residual: float = field(init=False, default=0.0)
    max_principle_ok: bool = field(init=False, default=True)

    def __post_init__(self):
        if self.g.n != 1:
            raise ValueError("the fd backend is one-dimensional")
        self._solve()

    @property
    def m(self) -> int:
        return 2 ** (self.g.J + self.refine)

    @property
    def J(self) -> int:
        return self.g.J

    def _boundary_rows(self) -> tuple[np.ndarray, np.ndarray]:
        reps = 2**self.refine
        gb = np.repeat(self.g.values, reps)
        if self.top_data is None:
            top = np.full(self.m, self.g.mean())
        else:
            top = np.broadcast_to(np.asarray(self.top_data, dtype=float), (self.m,)).copy()
        return gb, top

    def _solve(self):
        m = self.m
        h = 1.0 / m
        reps = 2**self.refine
        att = np.repeat(self.coeffs.a_tt, reps)
        atx = np.repeat(self.coeffs.a_tx, reps)
        axt = np.repeat(self.coeffs.a_xt, reps)
        axx = np.repeat(self.coeffs.a_xx, reps)
        gb, top = self._boundary_rows()
        N = m * m

        def cid(i, q):
            return i * m + q

        qv = np.arange(m)
        q_plus = np.minimum(qv + 1, m - 1)
        q_minus = np.maximum(qv - 1, 0)
        dx_den = (q_plus - q_minus) * h

        # --- x-derivative of u at cell centers (one-sided at lateral edges)
        def add_dx(op: _AffineOp, face_rows, i_cells, scale):
            op.add(face_rows, cid(i_cells, q_plus), scale / dx_den)
            op.add(face_rows, cid(i_cells, q_minus), -scale / dx_den)

        # horizontal faces: index f = i_face * m + q, i_face = 0..m (t = i_face*h)
        ft = _AffineOp((m + 1) * m, N)
        for i_face in range(m + 1):
            rows = i_face * m + qv
            if i_face == 0:
                ft.add(rows, cid(0, qv), att * 2.0 / h)
                ft.const[rows] += -att * gb * 2.0 / h
                # tangential derivative of the bottom data
                ft.const[rows] += atx * (gb[q_plus] - gb[q_minus]) / dx_den
            elif i_face == m:
                ft.add(rows, cid(m - 1, qv), -att * 2.0 / h)
                ft.const[rows] += att * top * 2.0 / h
                ft.const[rows] += atx * (top[q_plus] - top[q_minus]) / dx_den
            else:
                lo, hi = i_face - 1, i_face
                ft.add(rows, cid(hi, qv), att / h)
                ft.add(rows, cid(lo, qv), -att / h)
                add_dx(ft, rows, np.full(m, lo), atx / 2.0)
                add_dx(ft, rows, np.full(m, hi), atx / 2.0)

        # vertical faces: index f = i * (m + 1) + q_face, q_face = 0..m
        fx = _AffineOp(m * (m + 1), N)
        for q_face in range(1, m):  # lateral boundary faces carry zero flux
            lo, hi = q_face - 1, q_face
            a_xx_f = 0.5 * (axx[lo] + axx[hi])
            a_xt_f = 0.5 * (axt[lo] + axt[hi])
            iv = np.arange(m)
            rows = iv * (m + 1) + q_face
            fx.add(rows, cid(iv, hi), a_xx_f / h)
            fx.add(rows, cid(iv, lo), -a_xx_f / h)
            # t-derivative averaged over the two adjacent columns
            for side in (lo, hi):
                ft_scale = a_xt_f / 2.0
                interior = iv[(iv > 0) & (iv < m - 1)]
                rows_int = interior * (m + 1) + q_face
                fx.add(rows_int, cid(interior + 1, np.full(len(interior), side)), ft_scale / (2 * h))
                fx.add(rows_int, cid(interior - 1, np.full(len(interior), side)), -ft_scale / (2 * h))
                r0 = 0 * (m + 1) + q_face
                fx.add([r0], [cid(1, side)], [ft_scale / (1.5 * h)])
                fx.const[r0] += -ft_scale * gb[side] / (1.5 * h)
                r1 = (m - 1) * (m + 1) + q_face
                fx.add([r1], [cid(m - 2, side)], [-ft_scale / (1.5 * h)])
                fx.const[r1] += ft_scale * top[side] / (1.5 * h)

        # divergence: row per cell, (Ft_above - Ft_below + Fx_right - Fx_left)/h
        ii, qq = np.meshgrid(np.arange(m), qv, indexing="ij")
        ii, qq = ii.ravel(), qq.ravel()
        cells = cid(ii, qq)
        div_t = _AffineOp(N, (m + 1) * m)
        div_t.add(cells, (ii + 1) * m + qq, 1.0 / h)
        div_t.add(cells, ii * m + qq, -1.0 / h)
        div_x = _AffineOp(N, m * (m + 1))
        div_x.add(cells, ii * (m + 1) + qq + 1, 1.0 / h)
        div_x.add(cells, ii * (m + 1) + qq, -1.0 / h)

        Dt, Dx = div_t.matrix(), div_x.matrix()
        Ft, Fx = ft.matrix(), fx.matrix()
        L = Dt @ Ft + Dx @ Fx
        rhs = -(Dt @ ft.const + Dx @ fx.const)
        sol = spla.spsolve(L.tocsr(), rhs)
        self.residual = float(np.linalg.norm(L @ sol - rhs) /
                              (np.linalg.norm(rhs) + np.linalg.norm(L @ sol) + 1e-300))
        if self.residual > 1e-10:
            raise RuntimeError(f"fd solve residual {self.residual:.2e} above tolerance")
        self.mesh = sol.reshape(m, m)
        bvals = np.concatenate([gb, top])
        lo_v, hi_v = float(bvals.min()), float(bvals.max())
        span = hi_v - lo_v + 1e-30
        self.max_principle_ok = bool(self.mesh.min() >= lo_v - 1e-9 * span
                                     and self.mesh.max() <= hi_v + 1e-9 * span)

    def evaluate(self, t: float, x: np.ndarray) -> np.ndarray:
        """Bilinear interpolation on the mesh, boundary rows included."""
        x = np.atleast_1d(np.asarray(x, dtype=float))
        m = self.m
        h = 1.0 / m
        gb, top = self._boundary_rows()
        augmented = np.vstack([gb, self.mesh, top])
        t_nodes = np.concatenate([[0.0], (np.arange(m) + 0.5) * h, [1.0]])
        it = np.clip(np.searchsorted(t_nodes, t) - 1, 0, len(t_nodes) - 2)
        wt = (t - t_nodes[it]) / (t_nodes[it + 1] - t_nodes[it])
        pos = np.clip(x / h - 0.5, 0.0, m - 1.0)
        iq = np.minimum(pos.astype(int), m - 2)
        wq = pos - iq
        row0 = augmented[it] * (1 - wt) + augmented[it + 1] * wt
        return row0[iq] * (1 - wq) + row0[iq + 1] * wq

    def evaluate_row(self, t: float, x0: float, dx: float, count: int) -> np.ndarray:
        return self.evaluate(t, x0 + dx * np.arange(count))

    def gradient(self, t: float, x: np.ndarray, step: float | None = None) -> tuple[np.ndarray, np.ndarray]:
        x = np.atleast_1d(np.asarray(x, dtype=float))
        s = step or 0.5 / self.m
        t_hi, t_lo = min(t + s, 1.0), max(t - s, 0.0)
        dt = (self.evaluate(t_hi, x) - self.evaluate(t_lo, x)) / (t_hi - t_lo)
        dxv = (self.evaluate(t, x + s) - self.evaluate(t, x - s)) / (2 * s)
        return dt, dxv

    def gradient_row(self, t: float, x0: float, dx: float, count: int) -> tuple[np.ndarray, np.ndarray]:
        return self.gradient(t, x0 + dx * np.arange(count))

    def energy_check(self) -> tuple[float, float]:
        """(sum of |grad u|^2 h^2, lambda^-1 |boundary flux pairing|)."""
        m = self.m
        h = 1.0 / m
        gb, top = self._boundary_rows()
        augmented = np.vstack([gb, self.mesh, top])
        gt = np.diff(augmented, axis=0)
        gt[0] *= 2.0
        gt[-1] *= 2.0
        gt /= h
        gx = np.gradient(self.mesh, h, axis=1)
        energy = float(((gt[:-1] ** 2 + gt[1:] ** 2) / 2).sum() * h * h + (gx**2).sum() * h * h)
        reps = 2**self.refine
        att = np.repeat(self.coeffs.a_tt, reps)
        flux_bottom = att * (self.mesh[0] - gb) / (h / 2)
        flux_top = att * (top - self.mesh[-1]) / (h / 2)
        pairing = float(np.abs((flux_top * top - flux_bottom * gb).sum() * h))
        return energy, pairing / self.coeffs.lambda_exact()


def solve_fd(coeffs: EllipticCoefficients, g: GridFunction, refine: int = 1,
             top_data=None) -> FdSolution:
    """Finite-volume solve of div A grad u = 0 with the slab boundary conditions."""
    return FdSolution(g, coeffs, refine=refine, top_data=top_data)
