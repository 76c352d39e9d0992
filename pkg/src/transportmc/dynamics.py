"""Phase-space states, potentials, noise streams and the BAOAB integrator.

All quantities are in reduced units. States hold flat coordinate vectors of
length ``d = n_particles * dim_per_particle``; batched evaluation is supported
by adding leading axes, i.e. arrays of shape ``(..., d)``.

The integrator is the standard BAOAB splitting: half kick (B), half drift (A),
exact Ornstein-Uhlenbeck momentum update (O), half drift, half kick. Noise is
consumed only in the O substep, exactly ``d`` Gaussians per step, which makes
synchronous coupling of two copies a matter of sharing the drawn block.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np

__all__ = [
    "BLOWUP_LIMIT",
    "BlowUpError",
    "Box",
    "Cosine1D",
    "Harmonic",
    "LangevinParams",
    "NoiseStream",
    "PhaseState",
    "Potential",
    "SystemSpec",
    "Zero",
    "baoab_step",
    "evolve",
    "force",
    "sample_momenta",
]

#: Any coordinate exceeding this magnitude (or going non-finite) aborts the
#: realization instead of polluting ensemble averages.
BLOWUP_LIMIT = 1e12

_MASK64 = (1 << 64) - 1


class BlowUpError(RuntimeError):
    """Raised when a trajectory becomes non-finite or leaves the sane range."""

    def __init__(self, step=None, member=None):
        self.step = step
        self.member = member
        where = "" if step is None else f" at step {step}"
        who = "" if member is None else f" ({member} member)"
        super().__init__(f"numerical blow-up{where}{who}")


@dataclass(frozen=True)
class Box:
    """Periodic box with per-axis lengths.

    ``lengths`` has one entry per spatial dimension of a particle, e.g.
    ``(L,)`` for a 1D torus and ``(Lx, Ly, Lz)`` for a fluid. Flat coordinate
    vectors are interpreted as ``n_particles`` consecutive groups of
    ``len(lengths)`` components.
    """

    lengths: tuple

    def __post_init__(self):
        lengths = tuple(float(x) for x in np.atleast_1d(np.asarray(self.lengths, dtype=float)))
        if any(L <= 0 for L in lengths):
            raise ValueError("box lengths must be positive")
        object.__setattr__(self, "lengths", lengths)

    @property
    def dim(self):
        return len(self.lengths)

    def _per_coordinate(self, d):
        D = self.dim
        if d % D != 0:
            raise ValueError(f"coordinate count {d} incompatible with {D}-dimensional box")
        return np.tile(np.asarray(self.lengths), d // D)

    def wrap(self, q):
        """Map every component into [0, L_axis)."""
        q = np.asarray(q, dtype=float)
        L = self._per_coordinate(q.shape[-1])
        return np.mod(q, L)

    def min_image(self, dq):
        """Per-axis minimum-image convention for a coordinate difference."""
        dq = np.asarray(dq, dtype=float)
        L = self._per_coordinate(dq.shape[-1])
        return dq - L * np.rint(dq / L)


@dataclass(frozen=True)
class LangevinParams:
    """Inverse temperature, damping, diagonal mass and timestep.

    ``mass`` is a scalar or a per-coordinate vector. The noise amplitude of
    the continuous dynamics, sqrt(2*gamma/beta), and the OU coefficients of
    the discrete O substep are always derived from (beta, gamma, mass, dt)
    and never stored separately.
    """

    beta: float
    gamma: float
    mass: float | np.ndarray = 1.0
    dt: float = 1e-3

    def __post_init__(self):
        if self.beta <= 0 or self.gamma <= 0:
            raise ValueError("beta and gamma must be positive")
        if self.dt < 0:
            raise ValueError("dt must be nonnegative")
        m = np.asarray(self.mass, dtype=float)
        if np.any(m <= 0):
            raise ValueError("masses must be positive")
        object.__setattr__(self, "mass", m if m.ndim else float(m))

    def noise_amplitude(self):
        """sqrt(2*gamma/beta), the diffusion coefficient of the p equation."""
        return np.sqrt(2.0 * self.gamma / self.beta)

    def ou_coefficients(self, dt=None):
        """Exact O-substep coefficients (a, b): p <- a*p + b*G.

        a = exp(-gamma*dt/m) per coordinate, b = sqrt((1 - a^2) * m / beta).
        """
        dt = self.dt if dt is None else dt
        a = np.exp(-self.gamma * dt / np.asarray(self.mass))
        b = np.sqrt((1.0 - a * a) * np.asarray(self.mass) / self.beta)
        return a, b


@dataclass(frozen=True)
class PhaseState:
    """Positions and momenta of an N-particle system, flat layout.

    Positions are wrapped into the box (when present) at construction, so the
    invariant q in [0, L) componentwise always holds. Instances are immutable
    value types; stepping returns new states.
    """

    q: np.ndarray
    p: np.ndarray
    dim_per_particle: int = 1
    box: Box | None = None

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float)
        p = np.asarray(self.p, dtype=float)
        if q.shape != p.shape:
            raise ValueError(f"q shape {q.shape} != p shape {p.shape}")
        if q.shape[-1] % self.dim_per_particle != 0:
            raise ValueError("coordinate count incompatible with dim_per_particle")
        if self.box is not None:
            q = self.box.wrap(q)
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "p", p)

    @property
    def d(self):
        return self.q.shape[-1]

    @property
    def n_particles(self):
        return self.d // self.dim_per_particle

    def with_qp(self, q, p):
        return replace(self, q=q, p=p)


@dataclass(frozen=True)
class SystemSpec:
    """Potential, box and Langevin parameters defining the reference dynamics."""

    potential: "Potential"
    params: LangevinParams
    box: Box | None = None


class Potential:
    """Base class: consistent ``energy`` and ``force`` (= -grad energy)."""

    def energy(self, q, box=None):
        raise NotImplementedError

    def force(self, q, box=None):
        raise NotImplementedError


class Zero(Potential):
    """Free motion, V = 0."""

    def energy(self, q, box=None):
        q = np.asarray(q, dtype=float)
        return np.zeros(q.shape[:-1]) if q.ndim > 1 else 0.0

    def force(self, q, box=None):
        return np.zeros_like(np.asarray(q, dtype=float))


@dataclass(frozen=True)
class Harmonic(Potential):
    """V(q) = k/2 * |q|^2."""

    k: float = 1.0

    def energy(self, q, box=None):
        q = np.asarray(q, dtype=float)
        return 0.5 * self.k * np.sum(q * q, axis=-1)

    def force(self, q, box=None):
        return -self.k * np.asarray(q, dtype=float)


@dataclass(frozen=True)
class Cosine1D(Potential):
    """V(q) = amplitude * cos(q) on the 2*pi torus, applied componentwise."""

    amplitude: float = 1.0

    def energy(self, q, box=None):
        q = np.asarray(q, dtype=float)
        return self.amplitude * np.sum(np.cos(q), axis=-1)

    def force(self, q, box=None):
        return self.amplitude * np.sin(np.asarray(q, dtype=float))

    def grad1(self, q):
        """Pointwise V'(q), used by the finite-difference generator."""
        return -self.amplitude * np.sin(np.asarray(q, dtype=float))


def force(potential, q, box=None):
    """Force -grad V(q) for any potential variant.

    Raises a domain error for singular configurations (delegated to the
    potential, e.g. overlapping Lennard-Jones particles).
    """
    q = np.asarray(q, dtype=float)
    if not np.all(np.isfinite(q)):
        raise ValueError("non-finite positions")
    return potential.force(q, box=box)


@dataclass
class NoiseStream:
    """Counter-based Gaussian stream: (master_seed, stream_id, counter).

    Each ``normals``/``uniforms`` call draws one block from a Philox generator
    keyed by (master_seed, stream_id) with the block counter placed in the
    high word of the 256-bit Philox counter, then advances ``counter`` by one.
    Identical triples therefore reproduce identical draws regardless of
    process or thread scheduling, and distinct (master_seed, stream_id) pairs
    give statistically independent streams.
    """

    master_seed: int
    stream_id: int = 0
    counter: int = 0

    def _generator(self):
        key = np.array([self.master_seed & _MASK64, self.stream_id & _MASK64], dtype=np.uint64)
        ctr = np.array([0, 0, 0, self.counter & _MASK64], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=ctr))

    def normals(self, shape):
        """One block of standard Gaussians; advances the counter."""
        g = self._generator()
        self.counter += 1
        return g.standard_normal(shape)

    def uniforms(self, shape):
        """One block of U[0,1) draws; advances the counter."""
        g = self._generator()
        self.counter += 1
        return g.random(shape)

    def spawn(self, stream_id):
        """Independent stream under the same master seed."""
        return NoiseStream(self.master_seed, stream_id=stream_id)


def sample_momenta(params, noise, d):
    """Draw d momenta from the Gibbs marginal, variance m_i/beta per coordinate."""
    if d < 1:
        raise ValueError("d must be >= 1")
    g = noise.normals(d)
    return np.sqrt(np.asarray(params.mass) / params.beta) * g


def _check_finite(q, p, step=None, member=None):
    if not (np.all(np.isfinite(q)) and np.all(np.isfinite(p))):
        raise BlowUpError(step=step, member=member)
    if max(np.abs(q).max(initial=0.0), np.abs(p).max(initial=0.0)) > BLOWUP_LIMIT:
        raise BlowUpError(step=step, member=member)


def _total_force(potential, q, box, eta, forcing):
    f = potential.force(q, box=box)
    if forcing is not None and eta != 0.0:
        f = f + eta * forcing.evaluate(q)
    return f


def _baoab_core(q, p, params, potential, box, gaussians, eta=0.0, forcing=None, f0=None):
    """One BAOAB step on raw arrays. Returns (q, p, force_at_new_q)."""
    dt = params.dt
    half = 0.5 * dt
    inv_m = 1.0 / np.asarray(params.mass)
    a, b = params.ou_coefficients()

    if f0 is None:
        f0 = _total_force(potential, q, box, eta, forcing)
    p = p + half * f0
    q = q + half * inv_m * p
    if box is not None:
        q = box.wrap(q)
    p = a * p + b * gaussians
    q = q + half * inv_m * p
    if box is not None:
        q = box.wrap(q)
    f1 = _total_force(potential, q, box, eta, forcing)
    p = p + half * f1
    return q, p, f1


def baoab_step(state, params, potential, eta=0.0, forcing=None, noise=None, gaussians=None):
    """Advance one BAOAB step; consumes exactly d Gaussians.

    Parameters
    ----------
    state : PhaseState
    params : LangevinParams
    potential : Potential
    eta, forcing : optional forcing magnitude and field; the half kicks then
        use the total force -grad V + eta * F(q). With ``eta == 0`` or no
        forcing the code path is identical to the equilibrium stepper.
    noise : NoiseStream, drawn from unless ``gaussians`` is given.
    gaussians : explicit standard-normal block with the shape of ``state.p``
        (test hook, and the mechanism for synchronous coupling).
    """
    if gaussians is None:
        if noise is None:
            raise ValueError("either noise or gaussians must be provided")
        gaussians = noise.normals(state.p.shape)
    else:
        gaussians = np.asarray(gaussians, dtype=float)
        if gaussians.shape != state.p.shape:
            raise ValueError("gaussian block shape must match momenta")
    q, p, _ = _baoab_core(
        state.q, state.p, params, potential, state.box, gaussians, eta=eta, forcing=forcing
    )
    _check_finite(q, p)
    return state.with_qp(q, p)


def evolve(state, params, potential, n_steps, noise=None, gaussians=None,
           eta=0.0, forcing=None, callback=None, noise_block=8192):
    """Run ``n_steps`` BAOAB steps with force reuse across steps.

    ``callback(i, q, p)`` is invoked after step ``i`` (1-based) on the raw
    arrays. Noise is either a stream (drawn in blocks of ``noise_block``
    steps) or a pre-drawn array of shape ``(n_steps, ...)``; blow-up raises
    :class:`BlowUpError` carrying the step index.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be >= 0")
    q, p = state.q, state.p
    box = state.box
    f = None
    drawn = None
    for i in range(n_steps):
        if gaussians is not None:
            g = gaussians[i]
        else:
            if noise is None:
                raise ValueError("either noise or gaussians must be provided")
            j = i % noise_block
            if j == 0:
                drawn = noise.normals((min(noise_block, n_steps - i),) + p.shape)
            g = drawn[j]
        q, p, f = _baoab_core(q, p, params, potential, box, g, eta=eta, forcing=forcing, f0=f)
        try:
            _check_finite(q, p, step=i + 1)
        except BlowUpError:
            raise BlowUpError(step=i + 1) from None
        if callback is not None:
            callback(i + 1, q, p)
    return state.with_qp(q, p)
