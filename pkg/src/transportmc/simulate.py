"""Simulation drivers: LJ realization kernels and vectorized 1D ensembles.

The Lennard-Jones transient experiment runs one realization as: cubic
lattice + Gibbs momenta, equilibrium thermalization, momentum-map clone,
then synchronously coupled evolution of the (transient, equilibrium) pair
recording the response on both members. The inner loops are numba kernels
(single-threaded for determinism); realizations are distributed over worker
processes in fixed chunks and merged in chunk order, so results do not
depend on the worker count.

The 1D torus systems are cheap enough to evolve as vectorized ensembles:
initial conditions are sampled exactly from the Gibbs measure by inverse
CDF, and each realization consumes its own noise stream.

Stream layout per realization (stream_id = realization index + offset):
block 0 momenta/uniforms, block 1 momenta or thermalization noise, block 2
production noise. Reproducibility is bitwise for a fixed configuration.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .coupling import PerturbationMap
from .dynamics import Box, LangevinParams, NoiseStream, PhaseState, SystemSpec, evolve
from .estimators import ResponseSeries, SeriesAccumulator
from .forcing import ColoredDrift, SinusoidalTransverse, conjugate_response, eval_observable
from .lj import CellList, LJParams, OVERLAP_THRESHOLD, _forces_inplace, lattice_init

__all__ = [
    "LJTransientData",
    "LJTransientSetup",
    "run_1d_ensemble",
    "run_nemd_1d",
    "sample_positions_torus",
    "simulate_lj_transient",
]

LJ_CHUNK = 32
ONED_CHUNK = 512


# ---------------------------------------------------------------------------
# numba kernels for the LJ trajectories
# ---------------------------------------------------------------------------

@njit(cache=True)
def _wrap(q3, Lx, Ly, Lz):
    for i in range(q3.shape[0]):
        q3[i, 0] = q3[i, 0] % Lx
        q3[i, 1] = q3[i, 1] % Ly
        q3[i, 2] = q3[i, 2] % Lz


@njit(cache=True)
def _sane(q3, p3, limit):
    for i in range(q3.shape[0]):
        for d in range(3):
            if not (np.isfinite(q3[i, d]) and np.isfinite(p3[i, d])):
                return False
            if abs(q3[i, d]) > limit or abs(p3[i, d]) > limit:
                return False
    return True


@njit(cache=True)
def _observable(q3, p3, inv_m, mode, obs_vec, obs_ly):
    if mode == 0:  # velocity along a fixed field
        acc = 0.0
        for i in range(q3.shape[0]):
            acc += (obs_vec[i, 0] * p3[i, 0] + obs_vec[i, 1] * p3[i, 1]
                    + obs_vec[i, 2] * p3[i, 2])
        return acc * inv_m
    # imaginary part of the first transverse Fourier mode
    acc = 0.0
    two_pi = 2.0 * np.pi
    for i in range(q3.shape[0]):
        acc += p3[i, 0] * np.sin(two_pi * q3[i, 1] / obs_ly)
    return acc * inv_m / q3.shape[0]


@njit(cache=True)
def _baoab_member(q3, p3, f3, g2, half_dt, inv_m, a_ou, b_ou, Lx, Ly, Lz,
                  rc, sigma2, eps, v_rc, vp_rc, nx, ny, nz, pair_a, pair_b,
                  cell_of, order, start, cursor):
    """One BAOAB step in place; f3 holds the force at entry and at exit."""
    n = q3.shape[0]
    for i in range(n):
        p3[i, 0] += half_dt * f3[i, 0]
        p3[i, 1] += half_dt * f3[i, 1]
        p3[i, 2] += half_dt * f3[i, 2]
        q3[i, 0] += half_dt * inv_m * p3[i, 0]
        q3[i, 1] += half_dt * inv_m * p3[i, 1]
        q3[i, 2] += half_dt * inv_m * p3[i, 2]
    _wrap(q3, Lx, Ly, Lz)
    for i in range(n):
        p3[i, 0] = a_ou * p3[i, 0] + b_ou * g2[i, 0]
        p3[i, 1] = a_ou * p3[i, 1] + b_ou * g2[i, 1]
        p3[i, 2] = a_ou * p3[i, 2] + b_ou * g2[i, 2]
        q3[i, 0] += half_dt * inv_m * p3[i, 0]
        q3[i, 1] += half_dt * inv_m * p3[i, 1]
        q3[i, 2] += half_dt * inv_m * p3[i, 2]
    _wrap(q3, Lx, Ly, Lz)
    pe, min_r2 = _forces_inplace(q3, f3, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                                 nx, ny, nz, pair_a, pair_b, cell_of, order, start, cursor)
    for i in range(n):
        p3[i, 0] += half_dt * f3[i, 0]
        p3[i, 1] += half_dt * f3[i, 1]
        p3[i, 2] += half_dt * f3[i, 2]
    return pe, min_r2


@njit(cache=True)
def _lj_equilibrium_kernel(q3, p3, G, dt, a_ou, b_ou, mass, Lx, Ly, Lz,
                           rc, sigma2, eps, v_rc, vp_rc, nx, ny, nz,
                           pair_a, pair_b, ke_out, pe_out, limit, overlap2):
    """Thermalization run; records kinetic/potential energy per step.

    Returns 0 on success, k > 0 for blow-up after step k, -k for a singular
    configuration at step k (k = 1 refers to the initial force evaluation).
    """
    n = q3.shape[0]
    n_steps = G.shape[0]
    half_dt = 0.5 * dt
    inv_m = 1.0 / mass
    cell_of = np.empty(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    ncell = nx * ny * nz
    start = np.empty(ncell + 1, dtype=np.int64)
    cursor = np.empty(ncell, dtype=np.int64)
    f3 = np.empty((n, 3))
    pe, min_r2 = _forces_inplace(q3, f3, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                                 nx, ny, nz, pair_a, pair_b, cell_of, order, start, cursor)
    if min_r2 < overlap2:
        return -1
    for t in range(n_steps):
        pe, min_r2 = _baoab_member(q3, p3, f3, G[t], half_dt, inv_m, a_ou, b_ou,
                                   Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                                   nx, ny, nz, pair_a, pair_b,
                                   cell_of, order, start, cursor)
        if min_r2 < overlap2:
            return -(t + 1)
        if not _sane(q3, p3, limit):
            return t + 1
        ke = 0.0
        for i in range(n):
            ke += p3[i, 0] ** 2 + p3[i, 1] ** 2 + p3[i, 2] ** 2
        ke_out[t] = 0.5 * ke * inv_m
        pe_out[t] = pe
    return 0


@njit(cache=True)
def _lj_coupled_kernel(qx, px, qy, py, G, dt, a_ou, b_ou, mass, Lx, Ly, Lz,
                       rc, sigma2, eps, v_rc, vp_rc, nx, ny, nz,
                       pair_a, pair_b, mode, obs_vec, obs_ly, stride,
                       rx_out, ry_out, limit, overlap2):
    """Synchronously coupled pair evolution recording R on both members.

    Both members receive the identical Gaussian block G[t] in the O substep.
    Same status convention as the thermalization kernel.
    """
    n = qx.shape[0]
    n_steps = G.shape[0]
    half_dt = 0.5 * dt
    inv_m = 1.0 / mass
    cell_of = np.empty(n, dtype=np.int64)
    order = np.empty(n, dtype=np.int64)
    ncell = nx * ny * nz
    start = np.empty(ncell + 1, dtype=np.int64)
    cursor = np.empty(ncell, dtype=np.int64)
    fx = np.empty((n, 3))
    fy = np.empty((n, 3))
    _, min_rx = _forces_inplace(qx, fx, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                                nx, ny, nz, pair_a, pair_b, cell_of, order, start, cursor)
    _, min_ry = _forces_inplace(qy, fy, Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                                nx, ny, nz, pair_a, pair_b, cell_of, order, start, cursor)
    if min_rx < overlap2 or min_ry < overlap2:
        return -1
    rx_out[0] = _observable(qx, px, inv_m, mode, obs_vec, obs_ly)
    ry_out[0] = _observable(qy, py, inv_m, mode, obs_vec, obs_ly)
    rec = 1
    for t in range(n_steps):
        _, min_rx = _baoab_member(qx, px, fx, G[t], half_dt, inv_m, a_ou, b_ou,
                                  Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                                  nx, ny, nz, pair_a, pair_b,
                                  cell_of, order, start, cursor)
        _, min_ry = _baoab_member(qy, py, fy, G[t], half_dt, inv_m, a_ou, b_ou,
                                  Lx, Ly, Lz, rc, sigma2, eps, v_rc, vp_rc,
                                  nx, ny, nz, pair_a, pair_b,
                                  cell_of, order, start, cursor)
        if min_rx < overlap2 or min_ry < overlap2:
            return -(t + 1)
        if not (_sane(qx, px, limit) and _sane(qy, py, limit)):
            return t + 1
        if (t + 1) % stride == 0:
            rx_out[rec] = _observable(qx, px, inv_m, mode, obs_vec, obs_ly)
            ry_out[rec] = _observable(qy, py, inv_m, mode, obs_vec, obs_ly)
            rec += 1
    return 0


# ---------------------------------------------------------------------------
# LJ transient experiment driver
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LJTransientSetup:
    """Picklable description of one LJ transient experiment."""

    mode: str                 # 'mobility' or 'shear'
    n_particles: int
    density: float
    lj: LJParams
    params: LangevinParams
    t_therm: float
    t_final: float
    eta: float                # map magnitude
    alpha: int                # map order
    master_seed: int
    stride: int = 1
    eta_divide: float | None = None   # estimator normalization; defaults to eta
    stream_offset: int = 0

    @property
    def n_therm_steps(self):
        return int(round(self.t_therm / self.params.dt))

    @property
    def n_steps(self):
        return int(round(self.t_final / self.params.dt))

    @property
    def n_records(self):
        return self.n_steps // self.stride + 1

    @property
    def record_dt(self):
        return self.params.dt * self.stride

    def divide_eta(self):
        return self.eta if self.eta_divide is None else self.eta_divide


def _setup_runtime(setup):
    """Lattice, box, cell topology, forcing and observable constants."""
    q0, box = lattice_init(setup.n_particles, setup.density)
    cells = CellList.build(box, setup.lj.r_cut)
    if setup.mode == "mobility":
        forcing = ColoredDrift(setup.n_particles)
        mode = 0
        obs_vec = forcing.vector.reshape(-1, 3)
        obs_ly = 1.0
    elif setup.mode == "shear":
        forcing = SinusoidalTransverse(box.lengths[1])
        mode = 1
        obs_vec = np.zeros((setup.n_particles, 3))
        obs_ly = box.lengths[1]
    else:
        raise ValueError(f"unknown LJ transient mode {setup.mode!r}")
    mass = np.asarray(setup.params.mass)
    if mass.ndim != 0:
        raise ValueError("the LJ fast path requires a uniform scalar mass")
    return q0, box, cells, forcing, mode, obs_vec, obs_ly


def run_lj_realizations(setup, realization_ids):
    """Run a batch of realizations; returns raw response records.

    Returns dict with 'ids', 'rx', 'ry' ((k, n_records) arrays of the
    response on the transient and equilibrium members), 'kin_temp'
    (thermalization kinetic temperature per realization) and 'failures'
    (list of (realization_id, reason)).
    """
    q0_flat, box, cells, forcing, mode, obs_vec, obs_ly = _setup_runtime(setup)
    params = setup.params
    a_ou, b_ou = params.ou_coefficients()
    a_ou, b_ou = float(a_ou), float(b_ou)
    mass = float(np.asarray(params.mass))
    v_rc, vp_rc = setup.lj.shift_constants()
    Lx, Ly, Lz = box.lengths
    nx, ny, nz = cells.n_cells
    n = setup.n_particles
    d = 3 * n
    pmap = PerturbationMap(order=setup.alpha, eta=setup.eta, forcing=forcing,
                           params=params)

    n_therm = setup.n_therm_steps
    n_steps = setup.n_steps
    ids = list(realization_ids)
    rx = np.zeros((len(ids), setup.n_records))
    ry = np.zeros((len(ids), setup.n_records))
    kin_temp = np.full(len(ids), np.nan)
    ke_buf = np.empty(max(n_therm, 1))
    pe_buf = np.empty(max(n_therm, 1))
    failures = []
    ok = np.zeros(len(ids), dtype=bool)

    for row, k in enumerate(ids):
        stream = NoiseStream(setup.master_seed, stream_id=k + setup.stream_offset)
        p0 = np.sqrt(mass / params.beta) * stream.normals(d)
        qy = np.ascontiguousarray(q0_flat.reshape(n, 3).copy())
        py = np.ascontiguousarray(p0.reshape(n, 3))
        if n_therm > 0:
            g_therm = stream.normals((n_therm, d)).reshape(n_therm, n, 3)
            status = _lj_equilibrium_kernel(
                qy, py, g_therm, params.dt, a_ou, b_ou, mass, Lx, Ly, Lz,
                setup.lj.r_cut, setup.lj.sigma ** 2, setup.lj.epsilon,
                v_rc, vp_rc, nx, ny, nz, cells.pair_a, cells.pair_b,
                ke_buf, pe_buf, 1e12, OVERLAP_THRESHOLD ** 2)
            if status != 0:
                failures.append((k, _status_reason(status, "thermalization")))
                continue
            window = max(1, n_therm // 10)
            kin_temp[row] = 2.0 * ke_buf[n_therm - window:n_therm].mean() / d
        else:
            kin_temp[row] = 2.0 * (0.5 * np.sum(py * py) / mass) / d

        state = PhaseState(q=qy.reshape(-1), p=py.reshape(-1), dim_per_particle=3, box=box)
        x0 = pmap.apply(state)
        qx = np.ascontiguousarray(x0.q.reshape(n, 3).copy())
        px = np.ascontiguousarray(x0.p.reshape(n, 3).copy())

        if n_steps > 0:
            g_run = stream.normals((n_steps, d)).reshape(n_steps, n, 3)
            status = _lj_coupled_kernel(
                qx, px, qy, py, g_run, params.dt, a_ou, b_ou, mass, Lx, Ly, Lz,
                setup.lj.r_cut, setup.lj.sigma ** 2, setup.lj.epsilon,
                v_rc, vp_rc, nx, ny, nz, cells.pair_a, cells.pair_b,
                mode, obs_vec, obs_ly, setup.stride,
                rx[row], ry[row], 1e12, OVERLAP_THRESHOLD ** 2)
            if status != 0:
                failures.append((k, _status_reason(status, "coupled run")))
                continue
        else:
            inv_m = 1.0 / mass
            rx[row, 0] = _observable(qx, px, inv_m, mode, obs_vec, obs_ly)
            ry[row, 0] = _observable(qy, py, inv_m, mode, obs_vec, obs_ly)
        ok[row] = True

    return {
        "ids": np.array(ids),
        "ok": ok,
        "rx": rx,
        "ry": ry,
        "kin_temp": kin_temp,
        "failures": failures,
    }


def _status_reason(status, phase):
    if status < 0:
        return f"singular configuration during {phase} (step {-status})"
    return f"numerical blow-up during {phase} (step {status})"


def _lj_chunk_worker(args):
    setup, ids = args
    return run_lj_realizations(setup, ids)


@dataclass
class LJTransientData:
    """Aggregated output of an LJ transient experiment."""

    setup: LJTransientSetup
    acc_naive: SeriesAccumulator      # R(X_t) / eta
    acc_sub: SeriesAccumulator        # (R(X_t) - R(Y_t)) / eta
    kin_temp_mean: float
    n_ok: int
    failures: list
    series: ResponseSeries | None = None   # raw records when keep_series


def simulate_lj_transient(setup, n_realizations, threads=1, chunk=LJ_CHUNK,
                          keep_series=False):
    """Run K realizations of the coupled transient experiment.

    Chunks of realization indices are processed by worker processes and
    merged in chunk order; the decomposition is a function of the
    configuration only, so outputs are identical for any ``threads``.
    """
    if n_realizations < 1:
        raise ValueError("n_realizations must be >= 1")
    eta_div = setup.divide_eta()
    if eta_div == 0.0:
        raise ValueError("estimator normalization eta must be nonzero")
    chunks = [(setup, list(range(i, min(i + chunk, n_realizations))))
              for i in range(0, n_realizations, chunk)]
    acc_naive = SeriesAccumulator(setup.record_dt, setup.n_records)
    acc_sub = SeriesAccumulator(setup.record_dt, setup.n_records)
    kept_x, kept_y = [], []
    failures = []
    temps = []
    n_ok = 0

    if threads <= 1:
        results = map(_lj_chunk_worker, chunks)
        for out in results:
            n_ok += _fold_chunk(out, eta_div, acc_naive, acc_sub, temps, failures,
                                kept_x if keep_series else None,
                                kept_y if keep_series else None)
    else:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            for out in pool.map(_lj_chunk_worker, chunks):
                n_ok += _fold_chunk(out, eta_div, acc_naive, acc_sub, temps, failures,
                                    kept_x if keep_series else None,
                                    kept_y if keep_series else None)

    series = None
    if keep_series and kept_x:
        series = ResponseSeries(dt=setup.record_dt,
                                values=np.concatenate(kept_x, axis=0),
                                paired=np.concatenate(kept_y, axis=0))
    kin_mean = float(np.mean(temps)) if temps else float("nan")
    return LJTransientData(setup=setup, acc_naive=acc_naive, acc_sub=acc_sub,
                           kin_temp_mean=kin_mean, n_ok=n_ok, failures=failures,
                           series=series)


def _fold_chunk(out, eta_div, acc_naive, acc_sub, temps, failures, kept_x, kept_y):
    ok = out["ok"]
    rx = out["rx"][ok]
    ry = out["ry"][ok]
    if rx.shape[0]:
        acc_naive.add(rx / eta_div)
        acc_sub.add((rx - ry) / eta_div)
        temps.extend(out["kin_temp"][ok].tolist())
        if kept_x is not None:
            kept_x.append(rx)
            kept_y.append(ry)
    failures.extend(out["failures"])
    return int(ok.sum())


# ---------------------------------------------------------------------------
# 1D torus ensembles
# ---------------------------------------------------------------------------

def sample_positions_torus(potential, beta, n, stream, grid_points=8192):
    """Exact Gibbs position samples on [-pi, pi) by inverse-CDF interpolation."""
    grid = np.linspace(-np.pi, np.pi, grid_points + 1)
    energy = np.array([potential.energy(np.array([q])) for q in grid])
    dens = np.exp(-beta * (energy - energy.min()))
    cdf = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]))])
    cdf /= cdf[-1]
    u = stream.uniforms(n)
    return np.interp(u, cdf, grid)


def run_1d_ensemble(system, observable, T, n_realizations, master_seed, *,
                    forcing=None, eta=0.0, pmap=None, stream_offset=0,
                    chunk=ONED_CHUNK):
    """Vectorized ensemble of 1D trajectories from exact Gibbs initial data.

    Without ``pmap``: evolves single trajectories (driven by ``eta * forcing``
    when eta != 0) and returns values R(Y_t) with weights S(Y_0) when a
    forcing is given; this covers Green-Kubo (eta = 0), TTCF and driven runs.

    With ``pmap``: evolves synchronously coupled (map(Y_0), Y_0) pairs under
    the equilibrium dynamics and returns values R(X_t) with the paired
    R(Y_t); this is the transient subtraction geometry.
    """
    params = system.params
    if system.box is None or system.box.dim != 1:
        raise ValueError("1D ensembles need a 1D periodic box")
    n_steps = int(round(T / params.dt))
    n_t = n_steps + 1
    a_ou, b_ou = params.ou_coefficients()
    mass = np.asarray(params.mass)
    values = np.empty((n_realizations, n_t))
    paired = np.empty((n_realizations, n_t)) if pmap is not None else None
    weights = np.empty(n_realizations) if forcing is not None else None
    L = system.box.lengths[0]

    for c0 in range(0, n_realizations, chunk):
        kk = min(chunk, n_realizations - c0)
        q0 = np.empty(kk)
        p0 = np.empty(kk)
        g = np.empty((kk, n_steps))
        for j in range(kk):
            stream = NoiseStream(master_seed, stream_id=c0 + j + stream_offset)
            q0[j] = sample_positions_torus(system.potential, params.beta, 1, stream)[0]
            p0[j] = np.sqrt(float(mass) / params.beta) * stream.normals(1)[0]
            if n_steps:
                g[j] = stream.normals(n_steps)
        q0 = np.mod(q0, L)

        qy = q0[:, None].copy()
        py = p0[:, None].copy()
        if weights is not None:
            weights[c0:c0 + kk] = conjugate_response(forcing, params, qy, py)
        if pmap is not None:
            x0 = pmap.apply(PhaseState(q=qy, p=py, dim_per_particle=1, box=system.box))
            qx, px = x0.q.copy(), x0.p.copy()
            values[c0:c0 + kk, 0] = eval_observable(observable, qx, px)
            paired[c0:c0 + kk, 0] = eval_observable(observable, qy, py)
        else:
            values[c0:c0 + kk, 0] = eval_observable(observable, qy, py)

        drive = (eta != 0.0 and forcing is not None and pmap is None)
        fy = _drift_force(system, qy, forcing, eta) if drive else system.potential.force(qy)
        if pmap is not None:
            fx = system.potential.force(qx)
        for t in range(n_steps):
            gt = g[:, t][:, None]
            qy, py, fy = _baoab_vec(qy, py, fy, gt, system, a_ou, b_ou, mass, L,
                                    forcing if drive else None, eta if drive else 0.0)
            if pmap is not None:
                qx, px, fx = _baoab_vec(qx, px, fx, gt, system, a_ou, b_ou, mass, L,
                                        None, 0.0)
                values[c0:c0 + kk, t + 1] = eval_observable(observable, qx, px)
                paired[c0:c0 + kk, t + 1] = eval_observable(observable, qy, py)
            else:
                values[c0:c0 + kk, t + 1] = eval_observable(observable, qy, py)

    return ResponseSeries(dt=params.dt, values=values, paired=paired, weights=weights)


def _drift_force(system, q, forcing, eta):
    f = system.potential.force(q)
    if forcing is not None and eta != 0.0:
        f = f + eta * forcing.evaluate(q)
    return f


def _baoab_vec(q, p, f, g, system, a_ou, b_ou, mass, L, forcing, eta):
    """Vectorized BAOAB step on (K, 1) arrays; returns (q, p, new force)."""
    params = system.params
    half = 0.5 * params.dt
    inv_m = 1.0 / mass
    p = p + half * f
    q = np.mod(q + half * inv_m * p, L)
    p = a_ou * p + b_ou * g
    q = np.mod(q + half * inv_m * p, L)
    f = _drift_force(system, q, forcing, eta)
    p = p + half * f
    return q, p, f


def run_nemd_1d(system, observable, forcing, eta, T, master_seed, stream_id=0):
    """One long driven 1D trajectory; returns (R samples, dt).

    Initial conditions are an exact equilibrium sample; the caller discards
    the burn-in window via the NEMD estimator.
    """
    params = system.params
    n_steps = int(round(T / params.dt))
    stream = NoiseStream(master_seed, stream_id=stream_id)
    q0 = sample_positions_torus(system.potential, params.beta, 1, stream)
    p0 = np.sqrt(float(np.asarray(params.mass)) / params.beta) * stream.normals(1)
    state = PhaseState(q=q0, p=p0, dim_per_particle=1, box=system.box)
    values = np.empty(n_steps + 1)
    values[0] = float(eval_observable(observable, state.q, state.p))

    def record(i, q, p):
        values[i] = float(eval_observable(observable, q, p))

    evolve(state, params, system.potential, n_steps, noise=stream,
           eta=eta, forcing=forcing, callback=record)
    return values, params.dt
