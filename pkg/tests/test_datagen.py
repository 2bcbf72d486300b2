"""Sampling bounds, dataset construction, noise statistics, file round-trips."""

import numpy as np
import pytest

from symhnn.datagen import (
    SamplingDomain,
    SnapshotDataset,
    build_dataset,
    cart_pendulum_train_domain,
    monte_carlo_phase_samples,
    sample_cart_pendulum_initials,
    sample_two_body_initials,
    snapshot_times,
    split_counts,
)
from symhnn.errors import DataError
from symhnn.integrators import rk4
from symhnn.systems import cart_pendulum, two_body, vector_field
from symhnn.training import loss_dynamics
from symhnn.diffnet import DTYPE, ExactHamiltonianModel

import torch

K = 1016.895


class TestCartPendulumInitials:
    def test_inside_box(self):
        points = sample_cart_pendulum_initials(1000, seed=0)
        assert len(points) == 1000
        Z = np.array([p.z for p in points])
        assert np.all(np.abs(Z[:, 0]) < 5)
        assert np.all(np.abs(Z[:, 1]) < np.pi)
        assert np.all(np.abs(Z[:, 2]) < 1)
        assert np.all(np.abs(Z[:, 3]) < np.pi)

    def test_seed_reproducibility(self):
        a = sample_cart_pendulum_initials(10, seed=42)
        b = sample_cart_pendulum_initials(10, seed=42)
        for pa, pb in zip(a, b):
            np.testing.assert_array_equal(pa.z, pb.z)

    def test_zero_count(self):
        assert sample_cart_pendulum_initials(0, seed=0) == []


class TestTwoBodyInitials:
    def test_orthogonality_and_bounds(self):
        points = sample_two_body_initials(500, seed=1)
        for pt in points:
            r = np.linalg.norm(pt.q)
            pn = np.linalg.norm(pt.p)
            assert abs(pt.q @ pt.p) < 1e-10 * r * pn
            assert 5.0 <= r <= 10.0
            assert 0.7 <= pn / np.sqrt(K / r) <= 1.3

    def test_both_orientations_used(self):
        points = sample_two_body_initials(200, seed=2)
        signs = [np.sign(pt.q[0] * pt.p[1] - pt.q[1] * pt.p[0]) for pt in points]
        assert {-1.0, 1.0} <= set(signs)

    def test_unit_speed_factor_gives_circular_orbit(self):
        points = sample_two_body_initials(3, seed=3, speed_range=(1.0, 1.0))
        sys = two_body()
        for pt in points:
            traj = rk4(
                lambda z: vector_field(sys, z), pt.z, 10.0, tol=1e-10,
                sample_times=np.linspace(0, 10, 21),
            )
            radii = np.linalg.norm(traj.states[:, :2], axis=1)
            assert np.max(np.abs(radii - radii[0])) < 1e-6


class TestMonteCarloSamples:
    def test_box_membership_and_linear_mean(self):
        domain = cart_pendulum_train_domain()
        Z = monte_carlo_phase_samples(domain, 1_000_000, seed=4)
        box = domain.box
        assert np.all(Z >= box[:, 0]) and np.all(Z <= box[:, 1])
        # linear test function f(z) = 2 s + 3 p_phi has box mean 0
        f = 2 * Z[:, 0] + 3 * Z[:, 3]
        # var(f) = 4 var(s) + 9 var(p_phi) = 4*100/12 + 9*(2pi)^2/12
        sigma = np.sqrt((4 * 100 / 12 + 9 * (2 * np.pi) ** 2 / 12) / len(Z))
        assert abs(f.mean()) < 3 * sigma

    def test_seed_reproducibility(self):
        domain = cart_pendulum_train_domain()
        np.testing.assert_array_equal(
            monte_carlo_phase_samples(domain, 50, seed=5),
            monte_carlo_phase_samples(domain, 50, seed=5),
        )

    def test_annulus_membership(self):
        domain = SamplingDomain(
            kind="annulus", r_min=5.0, r_max=10.0,
            momentum_box=np.array([[-20.0, 20.0], [-20.0, 20.0]]),
        )
        Z = monte_carlo_phase_samples(domain, 10_000, seed=6)
        r = np.linalg.norm(Z[:, :2], axis=1)
        assert np.all((r >= 5.0) & (r <= 10.0))
        assert np.all(np.abs(Z[:, 2:]) <= 20.0)

    def test_mesh_is_deterministic_and_inside(self):
        domain = cart_pendulum_train_domain()
        mesh = domain.mesh(4)
        assert mesh.shape == (4**4, 4)
        np.testing.assert_array_equal(mesh, domain.mesh(4))


class TestSplitCounts:
    @pytest.mark.parametrize("total", [10, 46, 100, 9200, 46000, 55000, 99])
    def test_seventy_fifteen_fifteen(self, total):
        tr, va, te = split_counts(total)
        assert tr + va + te == total
        assert abs(tr - 0.70 * total) <= 0.5 + 1e-9
        assert abs(va - 0.15 * total) <= 0.5 + 1e-9
        assert abs(te - 0.15 * total) <= 1.0 + 1e-9  # absorbs both roundings


class TestSnapshotTimes:
    def test_endpoint_grids(self):
        assert len(snapshot_times(3.0, 15.0)) == 46
        assert len(snapshot_times(10.0, 1.0)) == 11
        np.testing.assert_allclose(snapshot_times(1.0, 4.0), [0, 0.25, 0.5, 0.75, 1.0])


class TestBuildDataset:
    def test_record_counts_and_split(self):
        sys = cart_pendulum()
        initials = sample_cart_pendulum_initials(5, seed=7)
        ds = build_dataset(sys, initials, horizon=3.0, rate=15.0, noise_var=0.0, seed=8)
        assert ds.size == 5 * 46
        tr, va, te = ds.counts
        assert (tr, va, te) == split_counts(ds.size)
        t_tr, Z_tr, Zd_tr = ds.split("train")
        assert len(Z_tr) == tr

    def test_noiseless_dynamics_loss_is_zero(self):
        sys = cart_pendulum()
        initials = sample_cart_pendulum_initials(3, seed=9)
        ds = build_dataset(sys, initials, horizon=1.0, rate=5.0, noise_var=0.0, seed=10)
        model = ExactHamiltonianModel(sys)
        _, Z, Zdot = ds.split("train")
        value = loss_dynamics(
            model, torch.as_tensor(Z, dtype=DTYPE), torch.as_tensor(Zdot, dtype=DTYPE)
        ).item()
        assert value == 0.0

    def test_noise_variance_estimate(self):
        sys = cart_pendulum()
        initials = sample_cart_pendulum_initials(250, seed=11)
        ds = build_dataset(sys, initials, horizon=3.0, rate=15.0, noise_var=1e-2, seed=12)
        assert ds.size >= 10_000
        exact = vector_field(sys, ds.Z)
        noise = ds.Zdot - exact
        est = noise.var()
        assert abs(est - 1e-2) / 1e-2 < 0.05
        # states themselves are noise-free
        assert np.all(np.abs(noise) < 1.0)

    def test_save_load_round_trip_bit_exact(self, tmp_path):
        sys = two_body()
        initials = sample_two_body_initials(4, seed=13)
        ds = build_dataset(sys, initials, horizon=2.0, rate=2.0, noise_var=1e-2, seed=14)
        path = tmp_path / "ds.csv"
        ds.save(path)
        back = SnapshotDataset.load(path)
        np.testing.assert_array_equal(back.t, ds.t)
        np.testing.assert_array_equal(back.Z, ds.Z)
        np.testing.assert_array_equal(back.Zdot, ds.Zdot)
        assert back.counts == ds.counts
        assert back.metadata["system"] == ds.metadata["system"]
        # writing again produces identical bytes
        path2 = tmp_path / "ds2.csv"
        back.save(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_two_body_domain_momentum_box_from_data(self):
        sys = two_body()
        initials = sample_two_body_initials(20, seed=15)
        ds = build_dataset(sys, initials, horizon=2.0, rate=2.0, noise_var=0.0, seed=16)
        domain = ds.domain()
        assert domain.kind == "annulus"
        n = ds.n
        _, Z_tr, _ = ds.split("train")
        p_max = np.max(np.abs(Z_tr[:, n:]), axis=0)
        np.testing.assert_allclose(domain.momentum_box[:, 1], 1.2 * p_max)

    def test_failed_trajectories_are_dropped(self, caplog):
        sys = two_body()
        # one orbit plunging straight into the singularity, one fine
        bad = sample_two_body_initials(1, seed=17)[0]
        object.__setattr__(bad, "p", np.zeros(2))
        good = sample_two_body_initials(1, seed=18)[0]
        ds = build_dataset(sys, [bad, good], horizon=10.0, rate=1.0, noise_var=0.0, seed=19)
        assert ds.size == 11
        assert ds.metadata["dropped"] == 1

    def test_invalid_args(self):
        sys = cart_pendulum()
        with pytest.raises(DataError):
            build_dataset(sys, [], horizon=0.0, rate=1.0, noise_var=0.0)


class TestDomainValidation:
    def test_bad_bounds_rejected(self):
        with pytest.raises(DataError):
            SamplingDomain(kind="box", box=np.array([[1.0, -1.0]]))
        with pytest.raises(DataError):
            SamplingDomain(kind="annulus", r_min=3.0, r_max=2.0,
                           momentum_box=np.array([[-1.0, 1.0]]))

    def test_dict_round_trip(self):
        domain = cart_pendulum_train_domain()
        back = SamplingDomain.from_dict(domain.to_dict())
        np.testing.assert_array_equal(back.box, domain.box)
