"""Losses, optimizer, schedules, and short end-to-end training runs."""

import numpy as np
import pytest
import torch

from symhnn.datagen import build_dataset, sample_cart_pendulum_initials, sample_two_body_initials
from symhnn.diffnet import DTYPE, ExactHamiltonianModel, ScalarNet, VectorNet, params_to_vector
from symhnn.errors import ConfigError, NumericError
from symhnn.geometry import AffineGenerator
from symhnn.systems import cart_pendulum, two_body
from symhnn.training import (
    AdamState,
    GeneratorParams,
    PlateauScheduler,
    TrainConfig,
    TrainedModel,
    adam_step,
    bracket_prior,
    delta_schedule,
    loss_dynamics,
    loss_sym_k,
    loss_sym_total,
    loss_vectorfield,
    total_loss,
    train,
)

ROT = np.array([[0.0, -1.0], [1.0, 0.0]])


def unit_rotation():
    return AffineGenerator(ROT / np.sqrt(2), np.zeros(2))


def translation():
    return AffineGenerator(np.zeros((2, 2)), [1.0, 0.0])


class LinearInFirstCoordinate:
    """Stub model H(q, p) = q1, so grad H = e1 everywhere."""

    def gradient_batch(self, Z, create_graph=False):
        g = torch.zeros_like(Z)
        g[:, 0] = 1.0
        return g


def tiny_dataset(system="cart-pendulum", trajectories=6, seed=0, noise_var=1e-2):
    if system == "cart-pendulum":
        sys = cart_pendulum()
        initials = sample_cart_pendulum_initials(trajectories, seed=seed)
        return sys, build_dataset(sys, initials, 3.0, 15.0, noise_var, seed=seed + 1)
    sys = two_body()
    initials = sample_two_body_initials(trajectories, seed=seed)
    return sys, build_dataset(sys, initials, 10.0, 1.0, noise_var, seed=seed + 1)


class TestLossDynamics:
    def test_zero_net_on_zero_fields(self):
        net = ScalarNet(4, hidden=(4,), seed=0)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        Z = torch.zeros(5, 4, dtype=DTYPE)
        assert loss_dynamics(net, Z, torch.zeros(5, 4, dtype=DTYPE)).item() == 0.0

    def test_single_residual_component(self):
        model = ExactHamiltonianModel(cart_pendulum())
        Z = torch.zeros(1, 4, dtype=DTYPE)
        Zdot = torch.zeros(1, 4, dtype=DTYPE)
        Zdot[0, 1] = 0.3  # off by e in one component
        assert loss_dynamics(model, Z, Zdot).item() == pytest.approx(0.09, rel=1e-14)

    def test_exact_model_noiseless_zero(self):
        for make, sampler in (
            (cart_pendulum, sample_cart_pendulum_initials),
            (two_body, sample_two_body_initials),
        ):
            sys = make()
            ds = build_dataset(sys, sampler(3, seed=1), 2.0, 5.0, 0.0, seed=2)
            _, Z, Zdot = ds.split("train")
            value = loss_dynamics(
                ExactHamiltonianModel(sys),
                torch.as_tensor(Z, dtype=DTYPE),
                torch.as_tensor(Zdot, dtype=DTYPE),
            ).item()
            assert value < 1e-16


class TestLossVectorField:
    def test_perfect_and_off_by_e(self):
        net = VectorNet(4, hidden=(4,), seed=1)
        with torch.no_grad():
            for p in net.parameters():
                p.zero_()
        Z = torch.zeros(3, 4, dtype=DTYPE)
        assert loss_vectorfield(net, Z, torch.zeros(3, 4, dtype=DTYPE)).item() == 0.0
        Zdot = torch.zeros(1, 4, dtype=DTYPE)
        Zdot[0, 2] = 0.5
        assert loss_vectorfield(net, Z[:1], Zdot).item() == pytest.approx(0.25, rel=1e-14)


class TestSymmetryLoss:
    def test_true_translation_symmetry_zero(self):
        model = ExactHamiltonianModel(cart_pendulum())
        gen = GeneratorParams.from_generator(translation())
        mc = torch.tensor(
            np.random.default_rng(2).uniform(-1, 1, (64, 4)), dtype=DTYPE
        )
        assert loss_sym_k(model, gen, mc).item() < 1e-12

    def test_true_rotation_symmetry_zero(self):
        model = ExactHamiltonianModel(two_body())
        gen = GeneratorParams.from_generator(unit_rotation())
        rng = np.random.default_rng(3)
        theta = rng.uniform(0, 2 * np.pi, 64)
        r = rng.uniform(5, 10, 64)
        q = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        p = rng.standard_normal((64, 2)) * 5
        mc = torch.tensor(np.concatenate([q, p], axis=1), dtype=DTYPE)
        assert loss_sym_k(model, gen, mc).item() < 1e-10

    def test_linear_hamiltonian_unit_value(self):
        gen = GeneratorParams.from_generator(translation())
        mc = torch.tensor(np.random.default_rng(4).uniform(-2, 2, (16, 4)), dtype=DTYPE)
        assert loss_sym_k(LinearInFirstCoordinate(), gen, mc).item() == pytest.approx(1.0, abs=1e-15)

    def test_zero_generator_rejected(self):
        gen = GeneratorParams.from_generator(AffineGenerator.zero(2))
        mc = torch.zeros(4, 4, dtype=DTYPE)
        with pytest.raises(ValueError):
            loss_sym_k(LinearInFirstCoordinate(), gen, mc)

    def test_scaling_in_generator_is_linear(self):
        # |v| -> c|v| scales the loss by c: integrand c^2, normalization 1/c
        net = ScalarNet(4, hidden=(6,), seed=5)
        rng = np.random.default_rng(6)
        mc = torch.tensor(rng.uniform(-1, 1, (32, 4)), dtype=DTYPE)
        base = AffineGenerator(rng.standard_normal((2, 2)), rng.standard_normal(2))
        v1 = GeneratorParams.from_generator(base)
        v3 = GeneratorParams.from_generator(AffineGenerator(3 * base.M, 3 * base.b))
        l1 = loss_sym_k(net, v1, mc).item()
        l3 = loss_sym_k(net, v3, mc).item()
        assert l3 == pytest.approx(3 * l1, rel=1e-12)


class TestSymmetryLossTotal:
    def test_single_true_unit_generator(self):
        model = ExactHamiltonianModel(cart_pendulum())
        gens = [GeneratorParams.from_generator(translation())]
        mc = torch.tensor(np.random.default_rng(7).uniform(-1, 1, (32, 4)), dtype=DTYPE)
        assert loss_sym_total(model, gens, mc).item() < 1e-12

    def test_duplicate_generators_cross_term(self):
        model = ExactHamiltonianModel(cart_pendulum())
        gens = [
            GeneratorParams.from_generator(translation()),
            GeneratorParams.from_generator(translation()),
        ]
        mc = torch.tensor(np.random.default_rng(8).uniform(-1, 1, (32, 4)), dtype=DTYPE)
        # both symmetry terms vanish, both norms are 1; <v,v>^2 = 1 remains
        assert loss_sym_total(model, gens, mc, beta=1.0).item() == pytest.approx(1.0, abs=1e-12)

    def test_scaled_generator_norm_penalty(self):
        model = ExactHamiltonianModel(cart_pendulum())
        doubled = AffineGenerator(np.zeros((2, 2)), [2.0, 0.0])
        gens = [GeneratorParams.from_generator(doubled)]
        mc = torch.tensor(np.random.default_rng(9).uniform(-1, 1, (32, 4)), dtype=DTYPE)
        alpha = 0.7
        assert loss_sym_total(model, gens, mc, alpha=alpha).item() == pytest.approx(alpha, abs=1e-12)


class TestTotalLoss:
    def test_delta_zero_reduces_to_dynamics(self):
        model = ExactHamiltonianModel(cart_pendulum())
        rng = np.random.default_rng(10)
        Z = torch.tensor(rng.uniform(-1, 1, (8, 4)), dtype=DTYPE)
        Zdot = torch.tensor(rng.standard_normal((8, 4)), dtype=DTYPE)
        mc = torch.tensor(rng.uniform(-1, 1, (8, 4)), dtype=DTYPE)
        gens = [GeneratorParams.random_unit(2, rng)]
        assert total_loss(model, gens, Z, Zdot, mc, delta=0.0).item() == pytest.approx(
            loss_dynamics(model, Z, Zdot).item(), abs=0
        )

    def test_zero_at_truth(self):
        for make, sampler, gen in (
            (cart_pendulum, sample_cart_pendulum_initials, translation()),
            (two_body, sample_two_body_initials, unit_rotation()),
        ):
            sys = make()
            ds = build_dataset(sys, sampler(3, seed=11), 2.0, 5.0, 0.0, seed=12)
            _, Z, Zdot = ds.split("train")
            mc = torch.as_tensor(ds.domain().sample(64, np.random.default_rng(13)), dtype=DTYPE)
            value = total_loss(
                ExactHamiltonianModel(sys),
                [GeneratorParams.from_generator(gen)],
                torch.as_tensor(Z, dtype=DTYPE),
                torch.as_tensor(Zdot, dtype=DTYPE),
                mc,
                delta=0.5,
            ).item()
            assert value < 1e-10

    def test_combination_matches_parts(self):
        net = ScalarNet(4, hidden=(6,), seed=14)
        rng = np.random.default_rng(15)
        Z = torch.tensor(rng.uniform(-1, 1, (8, 4)), dtype=DTYPE)
        Zdot = torch.tensor(rng.standard_normal((8, 4)), dtype=DTYPE)
        mc = torch.tensor(rng.uniform(-1, 1, (8, 4)), dtype=DTYPE)
        gens = [GeneratorParams.random_unit(2, rng)]
        delta = 0.5
        combined = total_loss(net, gens, Z, Zdot, mc, delta=delta).item()
        parts = loss_dynamics(net, Z, Zdot).item() + delta * loss_sym_total(net, gens, mc).item()
        assert combined == pytest.approx(parts, rel=1e-15)


class TestDeltaSchedule:
    def test_documented_points(self):
        cfg = TrainConfig()
        assert delta_schedule(0, cfg) == 0.0
        assert delta_schedule(99, cfg) == 0.0
        assert delta_schedule(100, cfg) == 0.0  # ramp start
        assert delta_schedule(150, cfg) == pytest.approx(0.25)
        assert delta_schedule(200, cfg) == 0.5
        assert delta_schedule(10000, cfg) == 0.5

    def test_zero_ramp_jumps(self):
        cfg = TrainConfig(warmup_flat=10, warmup_ramp=0, delta_max=0.3)
        assert delta_schedule(9, cfg) == 0.0
        assert delta_schedule(10, cfg) == 0.3


class TestAdam:
    def test_zero_gradient_fresh_state(self):
        theta = torch.tensor([1.0, -2.0], dtype=DTYPE)
        state = AdamState.zeros(2)
        new, state = adam_step(theta, torch.zeros(2, dtype=DTYPE), state, lr=0.1)
        np.testing.assert_array_equal(new.numpy(), theta.numpy())
        assert state.t == 1

    def test_moments_decay_on_zero_gradient(self):
        state = AdamState(torch.ones(1, dtype=DTYPE), torch.ones(1, dtype=DTYPE), t=5)
        _, state = adam_step(torch.zeros(1, dtype=DTYPE), torch.zeros(1, dtype=DTYPE), state, lr=0.1)
        assert state.m.item() == pytest.approx(0.9)
        assert state.v.item() == pytest.approx(0.999)

    def test_first_step_magnitude_is_lr(self):
        theta = torch.zeros(3, dtype=DTYPE)
        grad = torch.tensor([0.5, -2.0, 1e-3], dtype=DTYPE)
        new, _ = adam_step(theta, grad, AdamState.zeros(3), lr=0.01)
        np.testing.assert_allclose(
            new.numpy(), -0.01 * np.sign(grad.numpy()), rtol=1e-4
        )

    def test_constant_gradient_step_approaches_lr(self):
        theta = torch.zeros(1, dtype=DTYPE)
        grad = torch.tensor([0.37], dtype=DTYPE)
        state = AdamState.zeros(1)
        prev = theta.clone()
        for _ in range(500):
            prev = theta.clone()
            theta, state = adam_step(theta, grad, state, lr=0.01)
        assert abs(abs((theta - prev).item()) - 0.01) < 1e-3

    def test_non_finite_gradient_rejected(self):
        with pytest.raises(NumericError):
            adam_step(
                torch.zeros(1, dtype=DTYPE),
                torch.tensor([np.nan], dtype=DTYPE),
                AdamState.zeros(1),
                lr=0.1,
            )


class TestPlateauScheduler:
    def test_improving_keeps_lr(self):
        sched = PlateauScheduler(5e-3, 0.95, 50)
        for v in np.linspace(1.0, 0.1, 200):
            lr = sched.observe(v)
        assert lr == 5e-3

    def test_flat_51_observations_one_reduction(self):
        sched = PlateauScheduler(5e-3, 0.95, 50)
        for _ in range(51):
            lr = sched.observe(1.0)
        assert lr == pytest.approx(5e-3 * 0.95)

    def test_flat_102_observations_two_reductions(self):
        sched = PlateauScheduler(5e-3, 0.95, 50)
        for _ in range(102):
            lr = sched.observe(1.0)
        assert lr == pytest.approx(5e-3 * 0.95**2)


class TestBracketPrior:
    def test_translations_give_nothing(self):
        t1 = AffineGenerator(np.zeros((2, 2)), [1.0, 0.0])
        t2 = AffineGenerator(np.zeros((2, 2)), [0.0, 1.0])
        assert bracket_prior([t1, t2]) is None

    def test_rotation_translation_gives_unit_y_translation(self):
        rot = AffineGenerator(ROT, np.zeros(2))
        t1 = AffineGenerator(np.zeros((2, 2)), [1.0, 0.0])
        prior = bracket_prior([rot, t1])
        np.testing.assert_allclose(prior.M, np.zeros((2, 2)), atol=0)
        np.testing.assert_allclose(prior.b, [0.0, 1.0], atol=1e-15)

    def test_single_generator_gives_nothing(self):
        assert bracket_prior([translation()]) is None


class TestTrainLoop:
    def test_smoke_run_and_best_checkpoint(self):
        _, ds = tiny_dataset(trajectories=5, seed=20)
        cfg = TrainConfig(epochs=25, hidden=(16,), seed=0, K=1,
                          warmup_flat=2, warmup_ramp=3, mc_points=16)
        model = train(ds, cfg, "symhnn")
        assert len(model.history) == 25
        assert len(model.generators) == 1
        vals = [row["loss_val"] for row in model.history]
        assert model.metadata["best_val"] == pytest.approx(min(vals), abs=0)
        # returned parameters are the best-validation snapshot, not the last
        _, Zv, Zdotv = ds.split("validation")
        revalidated = loss_dynamics(
            model.net, torch.as_tensor(Zv, dtype=DTYPE), torch.as_tensor(Zdotv, dtype=DTYPE)
        ).item()
        assert revalidated == pytest.approx(min(vals), rel=1e-12)

    def test_hnn_equals_symhnn_with_zero_delta(self):
        _, ds = tiny_dataset(trajectories=4, seed=21)
        cfg_hnn = TrainConfig(epochs=8, hidden=(12,), seed=3)
        cfg_sym = TrainConfig(epochs=8, hidden=(12,), seed=3, delta_max=0.0, K=1)
        m1 = train(ds, cfg_hnn, "hnn")
        m2 = train(ds, cfg_sym, "symhnn")
        np.testing.assert_array_equal(
            params_to_vector(m1.net.parameters()).numpy(),
            params_to_vector(m2.net.parameters()).numpy(),
        )
        for a, b in zip(m1.history, m2.history):
            assert a["loss_train"] == b["loss_train"]
            assert a["loss_val"] == b["loss_val"]

    def test_rerun_is_bit_identical(self):
        _, ds = tiny_dataset(trajectories=4, seed=22)
        cfg = TrainConfig(epochs=6, hidden=(12,), seed=5, K=1,
                          warmup_flat=1, warmup_ramp=2, mc_points=8)
        m1 = train(ds, cfg, "symhnn")
        m2 = train(ds, cfg, "symhnn")
        np.testing.assert_array_equal(
            params_to_vector(m1.net.parameters()).numpy(),
            params_to_vector(m2.net.parameters()).numpy(),
        )
        assert m1.history == m2.history

    def test_early_stopping_counts_from_best(self):
        _, ds = tiny_dataset(trajectories=4, seed=23)
        cfg = TrainConfig(epochs=60, early_stop_patience=5, lr0=1e-300, hidden=(8,), seed=6)
        model = train(ds, cfg, "hnn")
        # lr is so small that nothing improves after the first epoch
        assert len(model.history) == 6

    def test_basenn_mode(self):
        _, ds = tiny_dataset(trajectories=4, seed=24)
        cfg = TrainConfig(epochs=10, hidden=(12,), seed=7)
        model = train(ds, cfg, "basenn")
        assert model.mode == "basenn"
        assert isinstance(model.net, VectorNet)
        assert model.generators == []
        field = model.field()
        out = field(np.zeros(4))
        assert out.shape == (4,)

    def test_two_body_symhnn_smoke(self):
        _, ds = tiny_dataset("two-body", trajectories=8, seed=25)
        cfg = TrainConfig(epochs=12, hidden=(12,), seed=8, K=1,
                          warmup_flat=2, warmup_ramp=2, mc_points=16)
        model = train(ds, cfg, "symhnn")
        assert len(model.generators) == 1
        assert np.isfinite(model.history[-1]["loss_sym"])

    def test_prior_initializes_net_and_generators(self):
        _, ds = tiny_dataset(trajectories=4, seed=26)
        cfg1 = TrainConfig(epochs=5, hidden=(12,), seed=9, K=1,
                           warmup_flat=0, warmup_ramp=1, mc_points=8)
        first = train(ds, cfg1, "symhnn")
        cfg2 = TrainConfig(epochs=1, hidden=(12,), seed=10, K=2, lr0=1e-300,
                           warmup_flat=0, warmup_ramp=1, mc_points=8)
        second = train(ds, cfg2, "symhnn", prior=first)
        # the inherited generator survives the (frozen) single epoch
        np.testing.assert_allclose(second.generators[0].M, first.generators[0].M, atol=1e-250)
        np.testing.assert_allclose(second.generators[0].b, first.generators[0].b, atol=1e-250)
        assert len(second.generators) == 2

    def test_mode_validation(self):
        _, ds = tiny_dataset(trajectories=4, seed=27)
        with pytest.raises(ConfigError):
            train(ds, TrainConfig(epochs=1), "warp-drive")
        with pytest.raises(ConfigError):
            train(ds, TrainConfig(epochs=1, K=0), "symhnn")


class TestCheckpointRoundTrip:
    def test_save_load_bit_exact(self, tmp_path):
        _, ds = tiny_dataset(trajectories=4, seed=28)
        cfg = TrainConfig(epochs=4, hidden=(10,), seed=11, K=1,
                          warmup_flat=0, warmup_ramp=1, mc_points=8)
        model = train(ds, cfg, "symhnn")
        path = tmp_path / "model.json"
        model.save(path)
        back = TrainedModel.load(path)
        np.testing.assert_array_equal(
            params_to_vector(back.net.parameters()).numpy(),
            params_to_vector(model.net.parameters()).numpy(),
        )
        np.testing.assert_array_equal(back.generators[0].M, model.generators[0].M)
        np.testing.assert_array_equal(back.generators[0].b, model.generators[0].b)
        assert back.config == model.config
        assert back.history == model.history
        path2 = tmp_path / "model2.json"
        back.save(path2)
        assert path.read_bytes() == path2.read_bytes()

    def test_history_csv_stable_bytes(self, tmp_path):
        _, ds = tiny_dataset(trajectories=4, seed=29)
        cfg = TrainConfig(epochs=3, hidden=(8,), seed=12)
        model = train(ds, cfg, "hnn")
        p1, p2 = tmp_path / "h1.csv", tmp_path / "h2.csv"
        model.write_history_csv(p1)
        model.write_history_csv(p2)
        assert p1.read_bytes() == p2.read_bytes()
        header = p1.read_text().splitlines()[0]
        assert header == "epoch,loss_train,loss_val,loss_sym,lr,delta"
