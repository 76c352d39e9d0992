"""Forcing fields, conjugate responses and response observables.

A forcing assigns a d-vector F(q) to each configuration; its conjugate
response S(q, p) = beta * F(q)^T M^{-1} p encodes how the forcing tilts the
invariant measure. Observables R are the fluxes whose steady-state averages
define the transport coefficients; every variant here has zero equilibrium
mean (the velocity observables are odd in p, the 1D test observable
integrates to zero over the torus by construction).

All evaluation functions broadcast over leading axes of (q, p).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "ColoredDrift",
    "Constant1D",
    "ShearFourierIm",
    "SinusoidalTransverse",
    "Test1D",
    "VelocityAlongF",
    "conjugate_response",
    "eval_forcing",
    "eval_observable",
]


@dataclass(frozen=True)
class Constant1D:
    """Constant scalar forcing for one-dimensional systems."""

    value: float = 1.0

    def evaluate(self, q):
        return np.full_like(np.asarray(q, dtype=float), self.value)


@dataclass(frozen=True)
class ColoredDrift:
    """Mobility forcing: particle i pushed along ((-1)^(i+1), 0, 0) / sqrt(N).

    Half the particles are driven along +x and half along -x; the 1/sqrt(N)
    normalization makes |F| = 1 for even N. Odd N injects net momentum and is
    allowed but flagged.
    """

    n_particles: int

    def __post_init__(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be >= 1")
        if self.n_particles % 2 == 1:
            warnings.warn(
                "ColoredDrift with odd particle count injects net momentum",
                stacklevel=3,
            )

    @cached_property
    def vector(self):
        f = np.zeros((self.n_particles, 3))
        f[::2, 0] = 1.0
        f[1::2, 0] = -1.0
        return (f / np.sqrt(self.n_particles)).reshape(-1)

    def evaluate(self, q):
        q = np.asarray(q, dtype=float)
        if q.shape[-1] != 3 * self.n_particles:
            raise ValueError("position vector incompatible with n_particles")
        return np.broadcast_to(self.vector, q.shape).copy()


@dataclass(frozen=True)
class SinusoidalTransverse:
    """Shear forcing: x-force sin(2*pi*y / L_y) from each particle's y coordinate."""

    box_length_y: float

    def evaluate(self, q):
        q = np.asarray(q, dtype=float)
        q3 = q.reshape(q.shape[:-1] + (-1, 3))
        f = np.zeros_like(q3)
        f[..., 0] = np.sin(2.0 * np.pi * q3[..., 1] / self.box_length_y)
        return f.reshape(q.shape)


def eval_forcing(spec, q):
    """Forcing field F(q) as a vector matching the shape of ``q``."""
    return spec.evaluate(q)


def conjugate_response(spec, params, q, p):
    """S(q, p) = beta * F(q)^T M^{-1} p."""
    f = spec.evaluate(np.asarray(q, dtype=float))
    inv_m = 1.0 / np.asarray(params.mass)
    return params.beta * np.sum(f * inv_m * np.asarray(p, dtype=float), axis=-1)


@dataclass(frozen=True)
class VelocityAlongF:
    """R(q, p) = F(q)^T M^{-1} p, the velocity along the forcing direction."""

    forcing: object
    mass: float | np.ndarray = 1.0

    def evaluate(self, q, p):
        f = self.forcing.evaluate(np.asarray(q, dtype=float))
        return np.sum(f * np.asarray(p, dtype=float) / np.asarray(self.mass), axis=-1)


@dataclass(frozen=True)
class ShearFourierIm:
    """Imaginary part of the first transverse Fourier mode of the velocity.

    R(q, p) = Im[(1/N) sum_n (M^{-1} p)_{n,x} exp(2*pi*i*q_{n,y} / L_y)]
            = (1/N) sum_n (M^{-1} p)_{n,x} sin(2*pi*q_{n,y} / L_y).
    """

    box_length_y: float
    mass: float | np.ndarray = 1.0

    def evaluate(self, q, p):
        q = np.asarray(q, dtype=float)
        q3 = q.reshape(q.shape[:-1] + (-1, 3))
        p3 = (np.asarray(p, dtype=float) / np.asarray(self.mass)).reshape(q3.shape)
        phase = np.sin(2.0 * np.pi * q3[..., 1] / self.box_length_y)
        return np.mean(p3[..., 0] * phase, axis=-1)


@dataclass(frozen=True)
class Test1D:
    """1D torus observable R(q) = (cos q - sin q) exp(beta V(q)).

    The exp(beta V) factor cancels the position marginal of the Gibbs
    measure, so the equilibrium mean is the plain integral of cos - sin over
    the torus, which vanishes; the cos - sin combination avoids the parity
    symmetries of more common observables.
    """

    beta: float
    potential: object

    def evaluate(self, q, p=None):
        q = np.asarray(q, dtype=float)
        vq = self.potential.energy(q, box=None)
        r = np.sum(np.cos(q) - np.sin(q), axis=-1)
        return r * np.exp(self.beta * vq)


def eval_observable(obs, q, p):
    """Evaluate a response observable on raw (q, p) arrays."""
    return obs.evaluate(q, p)
