import numpy as np
import pytest

from transportmc import (
    ColoredDrift,
    Constant1D,
    Cosine1D,
    LangevinParams,
    NoiseStream,
    ShearFourierIm,
    SinusoidalTransverse,
    Test1D,
    VelocityAlongF,
    conjugate_response,
    eval_forcing,
    eval_observable,
)
from transportmc.simulate import sample_positions_torus


class TestForcings:
    def test_colored_drift_two_particles(self):
        f = eval_forcing(ColoredDrift(2), np.zeros(6)).reshape(2, 3)
        s = 1.0 / np.sqrt(2.0)
        assert np.allclose(f, [[s, 0, 0], [-s, 0, 0]])

    @pytest.mark.parametrize("n", [2, 4, 10, 1000])
    def test_colored_drift_unit_norm_even(self, n):
        f = eval_forcing(ColoredDrift(n), np.zeros(3 * n))
        assert np.linalg.norm(f) == pytest.approx(1.0, abs=1e-14)

    def test_colored_drift_odd_warns(self):
        with pytest.warns(UserWarning):
            ColoredDrift(3)

    def test_colored_drift_dimension_check(self):
        with pytest.raises(ValueError):
            eval_forcing(ColoredDrift(2), np.zeros(9))

    def test_sinusoidal_zero_phase(self):
        spec = SinusoidalTransverse(box_length_y=4.0)
        q = np.array([0.5, 0.0, 2.0])  # y = 0
        assert eval_forcing(spec, q)[0] == pytest.approx(0.0, abs=1e-15)

    def test_sinusoidal_quarter_period(self):
        spec = SinusoidalTransverse(box_length_y=4.0)
        q = np.array([0.5, 1.0, 2.0])  # y = L_y / 4
        f = eval_forcing(spec, q)
        assert f[0] == pytest.approx(1.0, abs=1e-15)
        assert f[1] == 0.0 and f[2] == 0.0

    def test_constant_1d(self):
        f = eval_forcing(Constant1D(2.5), np.array([0.3]))
        assert np.array_equal(f, [2.5])


class TestConjugateResponse:
    def test_zero_momentum(self):
        params = LangevinParams(beta=1.0, gamma=1.0)
        spec = ColoredDrift(2)
        assert conjugate_response(spec, params, np.zeros(6), np.zeros(6)) == 0.0

    def test_constant_forcing_direct(self):
        params = LangevinParams(beta=1.0, gamma=1.0, mass=1.0)
        s = conjugate_response(Constant1D(1.0), params, np.array([0.0]),
                               np.array([0.7]))
        assert s == pytest.approx(0.7)

    def test_colored_drift_direct(self):
        # beta=2, M=Id, p_x = (3, 1): S = 2 * (3 - 1)/sqrt(2) = 2*sqrt(2)
        params = LangevinParams(beta=2.0, gamma=1.0, mass=1.0)
        p = np.array([3.0, 0, 0, 1.0, 0, 0])
        s = conjugate_response(ColoredDrift(2), params, np.zeros(6), p)
        assert s == pytest.approx(2.0 * np.sqrt(2.0))

    def test_mass_enters_inverse(self):
        params = LangevinParams(beta=1.0, gamma=1.0, mass=4.0)
        s = conjugate_response(Constant1D(1.0), params, np.array([0.0]),
                               np.array([2.0]))
        assert s == pytest.approx(0.5)


class TestObservables:
    def test_odd_in_p_vanish_at_zero_momentum(self):
        q = np.array([0.1, 0.4, 1.0, 2.0, 0.7, 0.2])
        p = np.zeros(6)
        vel = VelocityAlongF(ColoredDrift(2))
        shear = ShearFourierIm(box_length_y=5.0)
        assert eval_observable(vel, q, p) == 0.0
        assert eval_observable(shear, q, p) == 0.0

    def test_shear_unit_phase(self):
        # single particle at y = L_y/4 with unit p_x: Im(e^{i pi/2}) = 1
        obs = ShearFourierIm(box_length_y=4.0)
        q = np.array([0.0, 1.0, 0.0])
        p = np.array([1.0, 0.0, 0.0])
        assert eval_observable(obs, q, p) == pytest.approx(1.0)

    def test_test1d_symmetry_zero(self):
        obs = Test1D(beta=1.0, potential=Cosine1D(1.0))
        assert eval_observable(obs, np.array([np.pi / 4]), None) == \
            pytest.approx(0.0, abs=1e-15)

    def test_test1d_value(self):
        obs = Test1D(beta=2.0, potential=Cosine1D(1.0))
        q = 0.3
        expected = (np.cos(q) - np.sin(q)) * np.exp(2.0 * np.cos(q))
        assert eval_observable(obs, np.array([q]), None) == pytest.approx(expected)

    @pytest.mark.parametrize("obs", [
        VelocityAlongF(ColoredDrift(4)),
        ShearFourierIm(box_length_y=3.0),
    ])
    def test_parity_odd_in_p(self, obs):
        rng = np.random.default_rng(0)
        q = rng.uniform(0, 3.0, 12)
        p = rng.normal(size=12)
        assert eval_observable(obs, q, p) == pytest.approx(
            -eval_observable(obs, q, -p), rel=1e-12)

    def test_batched_evaluation(self):
        obs = VelocityAlongF(ColoredDrift(2))
        q = np.zeros((5, 6))
        p = np.ones((5, 6))
        out = eval_observable(obs, q, p)
        assert out.shape == (5,)

    def test_equilibrium_mean_zero(self):
        # exact Gibbs samples: each observable averages to 0 within 3 stderr
        rng = np.random.default_rng(42)
        n, k = 4, 4000
        q = rng.uniform(0, 5.0, (k, 3 * n))
        p = rng.normal(size=(k, 3 * n))
        for obs in (VelocityAlongF(ColoredDrift(n)), ShearFourierIm(5.0)):
            vals = eval_observable(obs, q, p)
            se = vals.std(ddof=1) / np.sqrt(k)
            assert abs(vals.mean()) < 3 * se

    def test_test1d_equilibrium_mean_zero(self, torus_system):
        stream = NoiseStream(7)
        beta = torus_system.params.beta
        q = sample_positions_torus(torus_system.potential, beta, 4000, stream)
        obs = Test1D(beta=beta, potential=torus_system.potential)
        vals = obs.evaluate(q[:, None])
        se = vals.std(ddof=1) / np.sqrt(len(vals))
        assert abs(vals.mean()) < 3 * se
