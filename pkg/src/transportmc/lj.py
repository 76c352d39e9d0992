"""Lennard-Jones fluid with a shifted-force cutoff.

Pair potential, periodic cubic box, cell-list force evaluation (numba), a
plain-numpy O(N^2) brute-force oracle, cubic-lattice initialization and
thermalization. Reduced units throughout (sigma = epsilon = k_B = 1 by
default).

The cell decomposition also covers small boxes: cells per axis may drop to 2
or 1, in which case the deduplicated neighbor enumeration degenerates towards
the all-pairs loop while remaining exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from numba import njit

from .dynamics import Box, PhaseState, Potential, evolve

__all__ = [
    "CellList",
    "LJParams",
    "LennardJonesSF",
    "SingularConfigurationError",
    "ThermalizationReport",
    "lattice_init",
    "lj_energy",
    "lj_forces",
    "lj_forces_bruteforce",
    "thermalize",
    "v_sf",
    "v_sf_prime",
]

#: Pair separations below this are treated as singular configurations.
OVERLAP_THRESHOLD = 1e-6


class SingularConfigurationError(RuntimeError):
    """Two particles closer than the overlap threshold."""


@dataclass(frozen=True)
class LJParams:
    """12-6 Lennard-Jones parameters with shifted-force cutoff radius."""

    sigma: float = 1.0
    epsilon: float = 1.0
    r_cut: float = 2.5

    def __post_init__(self):
        if self.sigma <= 0 or self.epsilon <= 0 or self.r_cut <= 0:
            raise ValueError("sigma, epsilon and r_cut must be positive")

    def shift_constants(self):
        """(v(r_c), v'(r_c)) of the untruncated pair potential."""
        s6 = (self.sigma / self.r_cut) ** 6
        v_rc = 4.0 * self.epsilon * (s6 * s6 - s6)
        vp_rc = (24.0 * self.epsilon / self.r_cut) * (s6 - 2.0 * s6 * s6)
        return v_rc, vp_rc


def v_sf(r, params=LJParams()):
    """Shifted-force pair potential, zero at and beyond the cutoff.

    v_SF(r) = [v(r) - v(r_c) - (r - r_c) v'(r_c)] for r <= r_c, else 0, so
    both the potential and its derivative vanish continuously at r_c.
    """
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pair distance must be positive")
    s6 = (params.sigma / r) ** 6
    v = 4.0 * params.epsilon * (s6 * s6 - s6)
    v_rc, vp_rc = params.shift_constants()
    out = np.where(r <= params.r_cut, v - v_rc - (r - params.r_cut) * vp_rc, 0.0)
    return out if out.ndim else float(out)


def v_sf_prime(r, params=LJParams()):
    """Derivative of the shifted-force pair potential."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("pair distance must be positive")
    s6 = (params.sigma / r) ** 6
    vp = (24.0 * params.epsilon / r) * (s6 - 2.0 * s6 * s6)
    _, vp_rc = params.shift_constants()
    out = np.where(r <= params.r_cut, vp - vp_rc, 0.0)
    return out if out.ndim else float(out)


@dataclass(frozen=True)
class CellList:
    """Static cell decomposition of a box for a given cutoff.

    ``pair_a``/``pair_b`` enumerate every unordered pair of cells (including
    each cell with itself) that can host interacting particles; wrapped
    duplicate neighbors are removed so each pair appears exactly once even
    for 1 or 2 cells per axis.
    """

    box: Box
    r_cut: float
    n_cells: tuple
    pair_a: np.ndarray
    pair_b: np.ndarray

    @classmethod
    def build(cls, box, r_cut):
        if box.dim != 3:
            raise ValueError("cell lists are implemented for 3D boxes")
        if min(box.lengths) < 2.0 * r_cut:
            raise ValueError("each box length must be at least 2*r_cut")
        n = tuple(max(1, int(np.floor(L / r_cut))) for L in box.lengths)
        nx, ny, nz = n

        def flat(ix, iy, iz):
            return (ix * ny + iy) * nz + iz

        pairs = set()
        for ix, iy, iz in product(range(nx), range(ny), range(nz)):
            c = flat(ix, iy, iz)
            for ox, oy, oz in product((-1, 0, 1), repeat=3):
                c2 = flat((ix + ox) % nx, (iy + oy) % ny, (iz + oz) % nz)
                pairs.add((min(c, c2), max(c, c2)))
        pair_a = np.array(sorted(pairs))[:, 0].astype(np.int64)
        pair_b = np.array(sorted(pairs))[:, 1].astype(np.int64)
        return cls(box=box, r_cut=float(r_cut), n_cells=n, pair_a=pair_a, pair_b=pair_b)

    @property
    def total_cells(self):
        nx, ny, nz = self.n_cells
        return nx * ny * nz

    def assign(self, q3):
        """Counting sort of particles into cells: (order, cell_start)."""
        nx, ny, nz = self.n_cells
        L = np.asarray(self.box.lengths)
        idx = np.floor(q3 / L * np.array(self.n_cells)).astype(np.int64)
        idx = np.minimum(idx, np.array(self.n_cells) - 1)  # guard q == L edge
        np.maximum(idx, 0, out=idx)
        cell_of = (idx[:, 0] * ny + idx[:, 1]) * nz + idx[:, 2]
        order = np.argsort(cell_of, kind="stable").astype(np.int64)
        start = np.searchsorted(cell_of[order], np.arange(self.total_cells + 1)).astype(np.int64)
        return order, start


@njit(cache=True)
def _plain_pair_sweep(q3, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc, f_out):
    """All-pairs i < j sweep; used when any axis has fewer than 3 cells."""
    rc2 = rc * rc
    pe = 0.0
    min_r2 = 1.0e300
    n = q3.shape[0]
    for i in range(n):
        qi0 = q3[i, 0]
        qi1 = q3[i, 1]
        qi2 = q3[i, 2]
        for j in range(i + 1, n):
            d0 = qi0 - q3[j, 0]
            d1 = qi1 - q3[j, 1]
            d2 = qi2 - q3[j, 2]
            d0 -= Lx * np.rint(d0 / Lx)
            d1 -= Ly * np.rint(d1 / Ly)
            d2 -= Lz * np.rint(d2 / Lz)
            r2 = d0 * d0 + d1 * d1 + d2 * d2
            if r2 < rc2:
                if r2 < min_r2:
                    min_r2 = r2
                s2 = sigma2 / r2
                s6 = s2 * s2 * s2
                r = np.sqrt(r2)
                fr = 24.0 * eps * s6 * (2.0 * s6 - 1.0) / r2 + vp_rc / r
                f0 = fr * d0
                f1 = fr * d1
                f2 = fr * d2
                f_out[i, 0] += f0
                f_out[i, 1] += f1
                f_out[i, 2] += f2
                f_out[j, 0] -= f0
                f_out[j, 1] -= f1
                f_out[j, 2] -= f2
                pe += 4.0 * eps * (s6 * s6 - s6) - v_rc - (r - rc) * vp_rc
    return pe, min_r2


@njit(cache=True)
def _cell_pair_sweep(q3, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                     order, start, pair_a, pair_b, f_out):
    """Forces + potential energy over deduplicated cell pairs.

    Returns (potential_energy, min_r2). ``f_out`` accumulates -grad V; the
    caller zeroes it. Deterministic pair order for bit-stable results.
    """
    rc2 = rc * rc
    pe = 0.0
    min_r2 = 1.0e300
    n_pairs = pair_a.shape[0]
    for ip in range(n_pairs):
        ca = pair_a[ip]
        cb = pair_b[ip]
        a0 = start[ca]
        a1 = start[ca + 1]
        b0 = start[cb]
        b1 = start[cb + 1]
        same = ca == cb
        for ii in range(a0, a1):
            i = order[ii]
            qi0 = q3[i, 0]
            qi1 = q3[i, 1]
            qi2 = q3[i, 2]
            jj0 = ii + 1 if same else b0
            for jj in range(jj0, b1):
                j = order[jj]
                d0 = qi0 - q3[j, 0]
                d1 = qi1 - q3[j, 1]
                d2 = qi2 - q3[j, 2]
                d0 -= Lx * np.rint(d0 / Lx)
                d1 -= Ly * np.rint(d1 / Ly)
                d2 -= Lz * np.rint(d2 / Lz)
                r2 = d0 * d0 + d1 * d1 + d2 * d2
                if r2 < rc2:
                    if r2 < min_r2:
                        min_r2 = r2
                    s2 = sigma2 / r2
                    s6 = s2 * s2 * s2
                    r = np.sqrt(r2)
                    # -v_SF'(r)/r, with v'(r) = (24 eps / r)(s6 - 2 s12)
                    fr = 24.0 * eps * s6 * (2.0 * s6 - 1.0) / r2 + vp_rc / r
                    f0 = fr * d0
                    f1 = fr * d1
                    f2 = fr * d2
                    f_out[i, 0] += f0
                    f_out[i, 1] += f1
                    f_out[i, 2] += f2
                    f_out[j, 0] -= f0
                    f_out[j, 1] -= f1
                    f_out[j, 2] -= f2
                    pe += 4.0 * eps * (s6 * s6 - s6) - v_rc - (r - rc) * vp_rc
    return pe, min_r2


@njit(cache=True)
def _sort_cells(q3, Lx, Ly, Lz, nx, ny, nz, cell_of, order, start, cursor):
    """Counting sort of particles into cells (stable, deterministic)."""
    n = q3.shape[0]
    ncell = nx * ny * nz
    for c in range(ncell + 1):
        start[c] = 0
    for i in range(n):
        ix = int(q3[i, 0] / Lx * nx)
        iy = int(q3[i, 1] / Ly * ny)
        iz = int(q3[i, 2] / Lz * nz)
        if ix >= nx:
            ix = nx - 1
        if iy >= ny:
            iy = ny - 1
        if iz >= nz:
            iz = nz - 1
        if ix < 0:
            ix = 0
        if iy < 0:
            iy = 0
        if iz < 0:
            iz = 0
        c = (ix * ny + iy) * nz + iz
        cell_of[i] = c
        start[c + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    for c in range(ncell):
        cursor[c] = start[c]
    for i in range(n):
        c = cell_of[i]
        order[cursor[c]] = i
        cursor[c] += 1


@njit(cache=True)
def _forces_inplace(q3, f3, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                    nx, ny, nz, pair_a, pair_b, cell_of, order, start, cursor):
    """Zero f3 and fill with forces; (pe, min_r2) returned.

    Falls back to the all-pairs sweep when the cell grid is too coarse for
    neighbor enumeration to prune anything.
    """
    for i in range(q3.shape[0]):
        f3[i, 0] = 0.0
        f3[i, 1] = 0.0
        f3[i, 2] = 0.0
    if nx < 3 or ny < 3 or nz < 3:
        return _plain_pair_sweep(q3, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc, f3)
    _sort_cells(q3, Lx, Ly, Lz, nx, ny, nz, cell_of, order, start, cursor)
    return _cell_pair_sweep(q3, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                            order, start, pair_a, pair_b, f3)


def _forces_energy(q, box, params, cells):
    q3 = np.ascontiguousarray(np.asarray(q, dtype=float).reshape(-1, 3))
    f = np.zeros_like(q3)
    n = q3.shape[0]
    nx, ny, nz = cells.n_cells
    v_rc, vp_rc = params.shift_constants()
    Lx, Ly, Lz = box.lengths
    cell_of = np.empty(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    start = np.empty(cells.total_cells + 1, dtype=np.int64)
    cursor = np.empty(cells.total_cells, dtype=np.int64)
    pe, min_r2 = _forces_inplace(q3, f, Lx, Ly, Lz, params.r_cut,
                                 params.sigma ** 2, params.epsilon, v_rc, vp_rc,
                                 nx, ny, nz, cells.pair_a, cells.pair_b,
                                 cell_of, order, start, cursor)
    if min_r2 < OVERLAP_THRESHOLD ** 2:
        raise SingularConfigurationError(
            f"singular configuration: pair distance {np.sqrt(min_r2):.3e}"
        )
    return f.reshape(np.shape(q)), pe


def lj_forces(q, box, params, cells):
    """Cell-list forces on flat positions ``q`` of length 3N."""
    return _forces_energy(q, box, params, cells)[0]


def lj_energy(q, box, params, cells):
    """Total shifted-force potential energy."""
    return _forces_energy(q, box, params, cells)[1]


def lj_forces_bruteforce(q, box, params):
    """Independent O(N^2) oracle, vectorized numpy double loop over pairs."""
    q3 = np.asarray(q, dtype=float).reshape(-1, 3)
    n = q3.shape[0]
    L = np.asarray(box.lengths)
    dq = q3[:, None, :] - q3[None, :, :]
    dq -= L * np.rint(dq / L)
    r2 = np.sum(dq * dq, axis=-1)
    iu = np.triu_indices(n, k=1)
    in_range = r2[iu] < params.r_cut ** 2
    if np.any(r2[iu][in_range] < OVERLAP_THRESHOLD ** 2):
        raise SingularConfigurationError("singular configuration in brute-force oracle")
    r2_safe = np.where(r2 > 0, r2, 1.0)
    s6 = (params.sigma ** 2 / r2_safe) ** 3
    _, vp_rc = params.shift_constants()
    with np.errstate(divide="ignore", invalid="ignore"):
        fr = 24.0 * params.epsilon * s6 * (2.0 * s6 - 1.0) / r2_safe + vp_rc / np.sqrt(r2_safe)
    mask = (r2 < params.r_cut ** 2) & ~np.eye(n, dtype=bool)
    fr = np.where(mask, fr, 0.0)
    f = np.sum(fr[:, :, None] * dq, axis=1)
    return f.reshape(np.shape(q))


def lj_energy_bruteforce(q, box, params):
    """O(N^2) oracle for the total shifted-force energy."""
    q3 = np.asarray(q, dtype=float).reshape(-1, 3)
    n = q3.shape[0]
    L = np.asarray(box.lengths)
    dq = q3[:, None, :] - q3[None, :, :]
    dq -= L * np.rint(dq / L)
    r = np.sqrt(np.sum(dq * dq, axis=-1))
    iu = np.triu_indices(n, k=1)
    rr = r[iu]
    return float(np.sum(np.where(rr <= params.r_cut, v_sf(np.where(rr > 0, rr, 1.0), params), 0.0)))


@dataclass(frozen=True)
class LennardJonesSF(Potential):
    """Potential adapter around the cell-list evaluation.

    The cell decomposition is rebuilt lazily per box geometry; particle
    assignment happens on every call.
    """

    params: LJParams = LJParams()

    def _cells(self, box):
        cached = getattr(self, "_cells_cache", None)
        if cached is not None and cached.box == box:
            return cached
        cells = CellList.build(box, self.params.r_cut)
        object.__setattr__(self, "_cells_cache", cells)
        return cells

    def force(self, q, box=None):
        if box is None:
            raise ValueError("Lennard-Jones forces require a periodic box")
        if np.asarray(q).ndim != 1:
            raise ValueError("LJ evaluation expects a single flat configuration")
        return lj_forces(q, box, self.params, self._cells(box))

    def energy(self, q, box=None):
        if box is None:
            raise ValueError("Lennard-Jones energy requires a periodic box")
        return lj_energy(q, box, self.params, self._cells(box))


def lattice_init(n, density):
    """Simple cubic lattice of ``n`` sites in a cubic box of density ``density``.

    Returns (positions, box) with positions flat of length 3n. The box side is
    L = (n / density)^(1/3); sites fill row-major, so non-cube ``n`` occupies a
    partial lattice. All pair distances are at least the lattice spacing.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if density <= 0:
        raise ValueError("density must be positive")
    L = (n / density) ** (1.0 / 3.0)
    side = int(np.ceil(n ** (1.0 / 3.0)))
    while side ** 3 < n:  # guard against floating cube-root rounding
        side += 1
    spacing = L / side
    ix = np.arange(n)
    coords = np.stack([ix // (side * side), (ix // side) % side, ix % side], axis=1)
    q3 = (coords + 0.5) * spacing
    return q3.reshape(-1), Box((L, L, L))


@dataclass(frozen=True)
class ThermalizationReport:
    """Stationarity diagnostics over the final 10% of the thermalization."""

    n_steps: int
    mean_kinetic: float
    mean_potential: float
    kinetic_temperature: float  # 2 * KE / d, per degree of freedom


def thermalize(state, system, t_therm, noise):
    """Evolve equilibrium dynamics for round(t_therm / dt) steps.

    Returns (state, ThermalizationReport); the report averages kinetic and
    potential energy over the final 10% window for stationarity inspection.
    """
    if t_therm < 0:
        raise ValueError("t_therm must be >= 0")
    n_steps = int(round(t_therm / system.params.dt)) if t_therm > 0 else 0
    d = state.d
    inv_m = 1.0 / np.asarray(system.params.mass)
    if n_steps == 0:
        ke = float(0.5 * np.sum(state.p * state.p * inv_m))
        pe = float(system.potential.energy(state.q, box=state.box))
        return state, ThermalizationReport(0, ke, pe, 2.0 * ke / d)

    window = max(1, n_steps // 10)
    kinetic = []
    potential_e = []

    def record(i, q, p):
        if i > n_steps - window:
            kinetic.append(0.5 * np.sum(p * p * inv_m))
            potential_e.append(system.potential.energy(q, box=state.box))

    out = evolve(state, system.params, system.potential, n_steps, noise=noise, callback=record)
    ke = float(np.mean(kinetic))
    pe = float(np.mean(potential_e))
    return out, ThermalizationReport(n_steps, ke, pe, 2.0 * ke / d)
