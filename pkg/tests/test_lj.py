import numpy as np
import pytest

from transportmc import (
    Box,
    CellList,
    LangevinParams,
    LJParams,
    LennardJonesSF,
    NoiseStream,
    PhaseState,
    SingularConfigurationError,
    SystemSpec,
    lattice_init,
    lj_forces,
    lj_forces_bruteforce,
    thermalize,
    v_sf,
    v_sf_prime,
)
from transportmc.lj import lj_energy, lj_energy_bruteforce

# reference values frozen from symbolic differentiation of
# v(r) = 4 eps [(sigma/r)^12 - (sigma/r)^6] with sigma = eps = 1, r_c = 2.5:
#   v(2.5)  = -0.016316891136
#   v'(2.5) =  0.0389994774528
V_RC = -0.016316891136
VP_RC = 0.0389994774528
R_MIN = 2.0 ** (1.0 / 6.0)


def random_config(rng, n, box_l, min_sep=0.85):
    """Random positions with a minimum-image separation floor."""
    q = rng.uniform(0, box_l, (n, 3))
    for _ in range(200):
        dq = q[:, None, :] - q[None, :, :]
        dq -= box_l * np.rint(dq / box_l)
        r2 = (dq * dq).sum(-1) + np.eye(n) * 1e9
        bad = np.unique(np.argwhere(r2 < min_sep ** 2)[:, 0])
        if len(bad) == 0:
            return q.reshape(-1)
        q[bad] = rng.uniform(0, box_l, (len(bad), 3))
    raise RuntimeError("could not place particles")


class TestPairPotential:
    def test_zero_at_cutoff(self):
        assert v_sf(2.5) == pytest.approx(0.0, abs=1e-15)

    def test_zero_beyond_cutoff(self):
        assert v_sf(3.0) == 0.0
        assert v_sf_prime(3.0) == 0.0

    def test_derivative_zero_at_cutoff(self):
        assert v_sf_prime(2.5) == pytest.approx(0.0, abs=1e-15)

    def test_value_at_minimum_of_raw_potential(self):
        # v_SF(2^(1/6)) = -1 - v(2.5) + (2.5 - 2^(1/6)) v'(2.5), frozen from
        # the symbolic oracle
        assert v_sf(R_MIN) == pytest.approx(-0.9299598485766651, abs=1e-12)

    def test_slope_at_raw_minimum_is_minus_vp_rc(self):
        # the raw minimum is no longer a stationary point: v_SF'(r_min) = -v'(r_c)
        assert v_sf_prime(R_MIN) == pytest.approx(-VP_RC, abs=1e-12)

    def test_slope_at_unit_separation(self):
        # v'(1) = -24, so v_SF'(1) = -24 - v'(2.5)
        assert v_sf_prime(1.0) == pytest.approx(-24.0 - VP_RC, abs=1e-10)

    def test_domain_error(self):
        with pytest.raises(ValueError):
            v_sf(0.0)
        with pytest.raises(ValueError):
            v_sf_prime(-1.0)

    def test_scaling_with_sigma_epsilon(self):
        p = LJParams(sigma=2.0, epsilon=3.0, r_cut=5.0)
        assert v_sf(2.0 * R_MIN, p) == pytest.approx(3.0 * v_sf(R_MIN), rel=1e-12)


class TestForces:
    def setup_method(self):
        self.params = LJParams()
        self.box = Box((8.0, 8.0, 8.0))
        self.cells = CellList.build(self.box, self.params.r_cut)

    def test_single_particle(self):
        q = np.array([1.0, 2.0, 3.0])
        assert np.array_equal(lj_forces(q, self.box, self.params, self.cells),
                              np.zeros(3))

    def test_pair_at_raw_minimum_outward(self):
        # |F| = |v_SF'(r_min)| = v'(r_c), directed outward (slightly repulsive)
        q = np.array([1.0, 1.0, 1.0, 1.0 + R_MIN, 1.0, 1.0])
        f = lj_forces(q, self.box, self.params, self.cells).reshape(2, 3)
        assert f[0, 0] == pytest.approx(-VP_RC, abs=1e-12)
        assert f[1, 0] == pytest.approx(VP_RC, abs=1e-12)
        assert np.allclose(f[:, 1:], 0.0, atol=1e-15)

    def test_minimum_image_pair(self):
        # separation 7.9 across the boundary is a 0.1 minimum image: strongly
        # repulsive along -x on the first particle
        q = np.array([0.05, 4.0, 4.0, 7.95, 4.0, 4.0])
        f = lj_forces(q, self.box, self.params, self.cells).reshape(2, 3)
        assert f[0, 0] > 1e8
        assert f[1, 0] == pytest.approx(-f[0, 0], rel=1e-12)

    def test_overlap_raises(self):
        q = np.array([1.0, 1.0, 1.0, 1.0 + 5e-7, 1.0, 1.0])
        with pytest.raises(SingularConfigurationError):
            lj_forces(q, self.box, self.params, self.cells)

    @pytest.mark.parametrize("n,box_l", [(27, 6.0), (64, 8.0), (125, 10.0)])
    def test_cell_list_matches_bruteforce(self, n, box_l):
        rng = np.random.default_rng(n)
        box = Box((box_l,) * 3)
        cells = CellList.build(box, self.params.r_cut)
        for _ in range(5):
            q = random_config(rng, n, box_l)
            f_cells = lj_forces(q, box, self.params, cells)
            f_brute = lj_forces_bruteforce(q, box, self.params)
            assert np.abs(f_cells - f_brute).max() < 1e-10

    def test_newton_third_law(self):
        rng = np.random.default_rng(3)
        q = random_config(rng, 64, 8.0)
        f = lj_forces(q, self.box, self.params, self.cells).reshape(-1, 3)
        assert np.abs(f.sum(axis=0)).max() < 1e-10

    def test_translation_invariance(self):
        rng = np.random.default_rng(5)
        q = random_config(rng, 32, 8.0).reshape(-1, 3)
        f0 = lj_forces(q.reshape(-1), self.box, self.params, self.cells)
        shifted = np.mod(q + np.array([1.3, -2.1, 0.7]), 8.0)
        f1 = lj_forces(shifted.reshape(-1), self.box, self.params, self.cells)
        assert np.abs(f0 - f1).max() < 1e-12

    def test_force_is_gradient_of_energy(self):
        rng = np.random.default_rng(8)
        q = random_config(rng, 16, 8.0)
        f = lj_forces(q, self.box, self.params, self.cells)
        h = 1e-6
        for i in rng.choice(len(q), size=12, replace=False):
            qp = q.copy()
            qm = q.copy()
            qp[i] += h
            qm[i] -= h
            grad_i = (lj_energy(qp, self.box, self.params, self.cells)
                      - lj_energy(qm, self.box, self.params, self.cells)) / (2 * h)
            assert abs(-grad_i - f[i]) / (1.0 + abs(grad_i)) < 1e-6

    def test_energy_matches_bruteforce(self):
        rng = np.random.default_rng(13)
        q = random_config(rng, 64, 8.0)
        e_cells = lj_energy(q, self.box, self.params, self.cells)
        e_brute = lj_energy_bruteforce(q, self.box, self.params)
        assert e_cells == pytest.approx(e_brute, rel=1e-12)

    def test_degenerate_cell_grid_still_exact(self):
        # L just above 2*r_cut: 2 cells per axis, the all-pairs path
        box = Box((5.2, 5.2, 5.2))
        cells = CellList.build(box, self.params.r_cut)
        assert min(cells.n_cells) < 3
        rng = np.random.default_rng(17)
        q = random_config(rng, 27, 5.2)
        f_cells = lj_forces(q, box, self.params, cells)
        f_brute = lj_forces_bruteforce(q, box, self.params)
        assert np.abs(f_cells - f_brute).max() < 1e-10


class TestCellList:
    def test_box_too_small_rejected(self):
        with pytest.raises(ValueError):
            CellList.build(Box((4.0, 8.0, 8.0)), 2.5)

    def test_every_particle_in_exactly_one_cell(self):
        box = Box((10.0, 10.0, 10.0))
        cells = CellList.build(box, 2.5)
        rng = np.random.default_rng(2)
        q3 = rng.uniform(0, 10.0, (50, 3))
        order, start = cells.assign(q3)
        assert sorted(order.tolist()) == list(range(50))
        assert start[-1] == 50

    def test_all_cutoff_pairs_covered(self):
        # brute-force pair list equals the pairs reachable through the
        # deduplicated cell-pair enumeration
        box = Box((10.0, 10.0, 10.0))
        cells = CellList.build(box, 2.5)
        rng = np.random.default_rng(4)
        q3 = rng.uniform(0, 10.0, (40, 3))
        order, start = cells.assign(q3)
        reachable = set()
        for a, b in zip(cells.pair_a, cells.pair_b):
            ia = order[start[a]:start[a + 1]]
            ib = order[start[b]:start[b + 1]]
            if a == b:
                for i in range(len(ia)):
                    for j in range(i + 1, len(ia)):
                        reachable.add((min(ia[i], ia[j]), max(ia[i], ia[j])))
            else:
                for i in ia:
                    for j in ib:
                        reachable.add((min(i, j), max(i, j)))
        dq = q3[:, None, :] - q3[None, :, :]
        dq -= 10.0 * np.rint(dq / 10.0)
        r2 = (dq * dq).sum(-1)
        for i in range(40):
            for j in range(i + 1, 40):
                if r2[i, j] < 2.5 ** 2:
                    assert (i, j) in reachable


class TestLattice:
    def test_perfect_cube(self):
        q, box = lattice_init(8, 1.0)
        assert box.lengths == (2.0, 2.0, 2.0)
        q3 = q.reshape(8, 3)
        dq = q3[:, None, :] - q3[None, :, :]
        dq -= 2.0 * np.rint(dq / 2.0)
        r = np.sqrt((dq * dq).sum(-1) + np.eye(8) * 1e9)
        assert r.min() == pytest.approx(1.0, abs=1e-12)

    def test_table_densities(self):
        _, box = lattice_init(1000, 0.7)
        assert box.lengths[0] == pytest.approx((1000 / 0.7) ** (1 / 3), rel=1e-12)
        assert box.lengths[0] == pytest.approx(11.27, abs=0.01)
        _, box = lattice_init(1000, 0.6)
        assert box.lengths[0] == pytest.approx(11.86, abs=0.01)

    def test_partial_fill_min_distance(self):
        q, box = lattice_init(100, 0.5)  # non-cube count
        q3 = q.reshape(100, 3)
        L = box.lengths[0]
        spacing = L / 5  # ceil(100^(1/3)) = 5
        dq = q3[:, None, :] - q3[None, :, :]
        dq -= L * np.rint(dq / L)
        r = np.sqrt((dq * dq).sum(-1) + np.eye(100) * 1e9)
        assert r.min() >= spacing - 1e-12
        assert np.all((q3 >= 0) & (q3 < L))

    def test_validation(self):
        with pytest.raises(ValueError):
            lattice_init(0, 1.0)
        with pytest.raises(ValueError):
            lattice_init(8, -1.0)


class TestThermalize:
    def _system(self, n, density, beta, dt=1e-3):
        q, box = lattice_init(n, density)
        params = LangevinParams(beta=beta, gamma=1.0, mass=1.0, dt=dt)
        potential = LennardJonesSF(LJParams())
        noise = NoiseStream(909)
        p = np.sqrt(1.0 / beta) * noise.normals(len(q))
        state = PhaseState(q=q, p=p, dim_per_particle=3, box=box)
        return state, SystemSpec(potential, params, box), noise

    def test_zero_time_is_identity(self):
        state, system, noise = self._system(27, 0.1, 1.0)
        out, report = thermalize(state, system, 0.0, noise)
        assert np.array_equal(out.q, state.q)
        assert np.array_equal(out.p, state.p)
        assert report.n_steps == 0

    def test_desk_scale_kinetic_temperature(self):
        # N = 125 at the mobility-table density: temperature within 5% of
        # 1/beta. One realization fluctuates by sqrt(2/d) ~ 7%, so average a
        # few independent realizations.
        q, box = lattice_init(125, 0.6)
        params = LangevinParams(beta=0.8, gamma=1.0, mass=1.0, dt=1e-3)
        system = SystemSpec(LennardJonesSF(LJParams()), params, box)
        temps = []
        for k in range(8):
            noise = NoiseStream(909, stream_id=k)
            p = np.sqrt(1.0 / 0.8) * noise.normals(len(q))
            state = PhaseState(q=q, p=p, dim_per_particle=3, box=box)
            _, report = thermalize(state, system, 1.0, noise)
            temps.append(report.kinetic_temperature)
        assert report.n_steps == 1000
        assert np.mean(temps) == pytest.approx(1.25, rel=0.05)

    def test_negative_time_rejected(self):
        state, system, noise = self._system(27, 0.1, 1.0)
        with pytest.raises(ValueError):
            thermalize(state, system, -1.0, noise)
