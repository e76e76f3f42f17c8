import math
import types

import numpy as np
import pytest
import torch

from evtol_sbi.checkpoints import (
    StandardizationStats,
    ema_init,
    ema_update,
    load_checkpoint,
    save_checkpoint,
)
from evtol_sbi.design_space import VOCAB_SIZE
from evtol_sbi.errors import NonFiniteLoss, SingularTime
from evtol_sbi.manifold import precompute_interpolant_table, project_tangent
from evtol_sbi.mixedit import (
    MixeDiT,
    MixeDiTConfig,
    argmax_topology,
    continuous_drift,
    discrete_drift,
    euler_walk,
    make_checkpoint,
    make_denoiser,
    model_from_checkpoint,
    sample,
    train,
)

TINY = MixeDiTConfig(
    vocab=5, d_x=3, hidden=16, heads=2, blocks=1,
    epochs=2, batch_size=8, sample_steps=50,
)


def toy_dataset(n=24, vocab=5, d_x=3, seed=0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, vocab - 1, size=n)
    x = rng.standard_normal((n, d_x)) + labels[:, None]
    rows = [
        types.SimpleNamespace(topology_index=int(l), x=xi)
        for l, xi in zip(labels, x)
    ]
    return types.SimpleNamespace(
        rows=rows,
        theta_mean=np.zeros(1), theta_std=np.ones(1),
        x_mean=x.mean(axis=0), x_std=x.std(axis=0),
    )


def toy_table(vocab=5):
    return precompute_interpolant_table(K=16, n_mc=128, dim=vocab)


# --- drift formulas ---

def test_discrete_drift_hand_case():
    p = np.array([[1.0, 0.0]])
    tau = np.array([[math.sqrt(0.5), math.sqrt(0.5)]])
    eta = discrete_drift(p, tau, np.array([1.0]))
    want = (math.pi / 4.0) * np.array([0.5, -0.5]) / math.sqrt(0.5)
    assert np.max(np.abs(eta[0] - want)) <= 1e-6
    assert abs(eta[0, 0] - 0.5554) <= 1e-4


def test_discrete_drift_vanishes_at_target_vertex():
    tau = np.zeros((1, 4))
    tau[0, 2] = 1.0
    p = np.zeros((1, 4))
    p[0, 2] = 1.0
    eta = discrete_drift(p, tau, np.array([3.0]))
    assert np.allclose(eta, 0.0)


def test_discrete_drift_tangent():
    rng = np.random.default_rng(5)
    tau = np.abs(rng.standard_normal((2000, 9)))
    tau /= np.linalg.norm(tau, axis=-1, keepdims=True)
    p = rng.dirichlet(np.ones(9), size=2000)
    eta = discrete_drift(p, tau, rng.uniform(0.1, 10.0, 2000))
    assert np.max(np.abs(np.sum(eta * tau, axis=-1))) <= 1e-9


def test_continuous_drift_zero_noise_prediction():
    x = np.array([[0.4, -1.2]])
    d = continuous_drift(x, np.zeros_like(x), 0.25, 2.5)
    assert np.allclose(d, x / 0.25, atol=1e-12)


def test_continuous_drift_half_time_coefficients():
    # at t=0.5 with no injected noise the drift is 2x - (2/sqrt(.75)) eps
    x = np.array([[1.0, -2.0]])
    eps = np.array([[0.3, 0.7]])
    d = continuous_drift(x, eps, 0.5, 0.0)
    want = 2.0 * x - (2.0 / math.sqrt(0.75)) * eps
    assert np.max(np.abs(d - want)) <= 1e-6
    # the injected-noise term subtracts (sigma_t/2) eps / beta on top
    d2 = continuous_drift(x, eps, 0.5, 2.5)
    want2 = want - 1.25 * eps / math.sqrt(0.75)
    assert np.max(np.abs(d2 - want2)) <= 1e-6


def test_continuous_drift_singular_ends():
    x = np.ones((1, 2))
    with pytest.raises(SingularTime):
        continuous_drift(x, x, 1e-8, 2.5)
    with pytest.raises(SingularTime):
        continuous_drift(x, x, 1.0, 2.5)


# --- config and model ---

def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        MixeDiTConfig(gamma=1.5)
    with pytest.raises(ValueError):
        MixeDiTConfig(hidden=0)
    with pytest.raises(ValueError):
        MixeDiTConfig(discrete_noise="white")


def test_paper_config_dimensions():
    cfg = MixeDiTConfig.paper()
    assert (cfg.hidden, cfg.heads, cfg.blocks) == (768, 12, 12)
    assert cfg.vocab == VOCAB_SIZE


def test_forward_shapes_and_probabilities():
    torch.manual_seed(0)
    model = MixeDiT(TINY)
    tau = torch.softmax(torch.randn(7, 5), dim=-1).sqrt()
    x = torch.randn(7, 3)
    t = torch.rand(7)
    out = model(tau, x, t, t)
    assert out.p_hat.shape == (7, 5)
    assert out.eps_hat.shape == (7, 3)
    assert torch.allclose(out.p_hat.sum(dim=-1), torch.ones(7), atol=1e-6)
    assert torch.allclose(out.p_hat, torch.softmax(out.logits, dim=-1))
    again = model(tau, x, t, t)
    assert torch.equal(out.logits, again.logits)
    assert torch.equal(out.eps_hat, again.eps_hat)


def test_gamma_extremes_silence_the_other_head():
    from evtol_sbi.mixedit import training_loss

    torch.manual_seed(1)
    model = MixeDiT(TINY)
    n = 6
    tau_t = torch.softmax(torch.randn(n, 5), dim=-1).sqrt()
    x_t = torch.randn(n, 3)
    t = torch.rand(n)
    labels = torch.randint(0, 4, (n,))
    eps = torch.randn(n, 3)
    w = torch.ones(n)

    for gamma, silent_head in ((1.0, model.head_x), (0.0, model.head_tau)):
        cfg = MixeDiTConfig(
            vocab=5, d_x=3, hidden=16, heads=2, blocks=1, gamma=gamma
        )
        model.zero_grad()
        loss = training_loss(model, cfg, tau_t, x_t, t, t, labels, eps, w)
        loss.backward()
        assert torch.all(silent_head.weight.grad == 0.0)


# --- training ---

def test_training_bitwise_reproducible():
    ds = toy_dataset()
    table = toy_table()
    a = train(ds, table, TINY, seed=7)
    b = train(ds, table, TINY, seed=7)
    assert a.losses == b.losses
    for k, v in a.model.state_dict().items():
        assert torch.equal(v, b.model.state_dict()[k])
    for k in a.ema:
        assert np.array_equal(a.ema[k], b.ema[k])


def test_training_rejects_out_of_range_labels():
    ds = toy_dataset()
    ds.rows[0].topology_index = 4  # the mask slot, not a class
    with pytest.raises(ValueError):
        train(ds, toy_table(), TINY, seed=0)


def test_non_finite_loss_carries_batch_seed():
    ds = toy_dataset()
    ds.rows[3].x = np.array([np.inf, 0.0, 0.0])
    ds.x_mean = np.zeros(3)
    ds.x_std = np.ones(3)
    with pytest.raises(NonFiniteLoss) as exc:
        train(ds, toy_table(), TINY, seed=0)
    assert exc.value.batch_seed is not None


def test_ema_is_exponential_average():
    model = torch.nn.Linear(2, 2)
    with torch.no_grad():
        for p in model.parameters():
            p.fill_(1.0)
    shadow = ema_init(model)
    with torch.no_grad():
        for p in model.parameters():
            p.fill_(0.0)
    ema_update(shadow, model, 0.999)
    for v in shadow.values():
        assert torch.allclose(v, torch.full_like(v, 0.999))


# --- sampling ---

def analytic_gaussian_eps(mu, sd):
    def fn(x, t):
        t = np.asarray(t, dtype=np.float64)[:, None]
        b2 = 1.0 - t * t
        return np.sqrt(b2) * (x - t * mu) / (t * t * sd * sd + b2)

    return fn


def test_euler_walk_recovers_gaussian_moments():
    # closed-form optimal denoiser, no learning involved
    cfg = MixeDiTConfig(
        vocab=6, d_x=4, hidden=16, heads=2, blocks=1, sample_steps=200
    )
    eps_fn = analytic_gaussian_eps(1.0, 0.5)

    def denoise(tau, x, t_tau, t_x):
        return np.full((len(tau), 6), 1.0 / 6.0), eps_fn(x, t_x)

    tau, x = euler_walk(denoise, cfg, 2000, np.random.default_rng(2))
    assert abs(x.mean() - 1.0) <= 0.05
    assert abs(x.std() - 0.5) <= 0.05
    assert np.max(np.abs(np.linalg.norm(tau, axis=-1) - 1.0)) <= 1e-9


def test_euler_walk_condition_pins_x_and_clock():
    cfg = MixeDiTConfig(
        vocab=4, d_x=2, hidden=16, heads=2, blocks=1, sample_steps=20
    )
    cond = np.array([0.3, -1.1])
    seen_tx = []

    def denoise(tau, x, t_tau, t_x):
        seen_tx.append(float(t_x[0]))
        assert np.allclose(x, cond)
        return np.full((len(tau), 4), 0.25), np.zeros((len(tau), 2))

    _, x = euler_walk(denoise, cfg, 3, np.random.default_rng(0), condition=cond)
    assert np.array_equal(x, np.tile(cond, (3, 1)))
    assert all(t == 1.0 for t in seen_tx)


def test_argmax_topology_ignores_mask_slot():
    # heavy mask coordinate must not win the argmax
    tau = np.array([[0.1, 0.3, 0.94], [0.9, 0.1, 0.42]])
    tau /= np.linalg.norm(tau, axis=-1, keepdims=True)
    assert argmax_topology(tau).tolist() == [1, 0]


def test_sample_requires_full_vocabulary():
    model = MixeDiT(TINY)
    stats = StandardizationStats(
        np.zeros(1), np.ones(1), np.zeros(3), np.ones(3)
    )
    with pytest.raises(ValueError):
        sample(model, TINY, stats, n=1)


def test_sample_returns_topologies_in_raw_units():
    cfg = MixeDiTConfig(
        vocab=VOCAB_SIZE, d_x=3, hidden=8, heads=2, blocks=1, sample_steps=10
    )
    torch.manual_seed(0)
    model = MixeDiT(cfg)
    stats = StandardizationStats(
        np.zeros(1), np.ones(1),
        np.array([10.0, -5.0, 0.0]), np.array([2.0, 1.0, 4.0]),
    )
    out = sample(model, cfg, stats, n=4, seed=3)
    assert len(out) == 4
    for topo, x in out:
        assert hasattr(topo, "index")
        assert x.shape == (3,)
    # conditioning in raw units standardizes before the walk and returns
    # the same raw vector untouched
    cond = np.array([12.0, -4.0, 2.0])
    out = sample(model, cfg, stats, condition=cond, n=2, seed=3)
    for _, x in out:
        assert np.allclose(x, cond, atol=1e-12)


# --- checkpointing ---

def test_checkpoint_roundtrip(tmp_path):
    ds = toy_dataset()
    res = train(ds, toy_table(), TINY, seed=11)
    stats = StandardizationStats.from_dataset(ds)
    ckpt = make_checkpoint(res, TINY, stats)
    path = tmp_path / "m.npz"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    assert loaded.kind == "mixedit"
    assert loaded.step == res.step
    assert loaded.schedule["beta0"] == TINY.beta0

    model, cfg, stats2 = model_from_checkpoint(loaded, use_ema=False)
    assert cfg == TINY
    assert stats2.digest() == stats.digest()
    tau = torch.softmax(torch.randn(5, 5), dim=-1).sqrt()
    x = torch.randn(5, 3)
    t = torch.rand(5)
    want = res.model(tau, x, t, t)
    got = model(tau, x, t, t)
    assert torch.allclose(want.logits, got.logits, atol=1e-12)
    assert torch.allclose(want.eps_hat, got.eps_hat, atol=1e-12)


def test_checkpoint_kind_guard(tmp_path):
    ds = toy_dataset()
    res = train(ds, toy_table(), TINY, seed=1)
    ckpt = make_checkpoint(res, TINY, StandardizationStats.from_dataset(ds))
    ckpt.kind = "maskedit"
    with pytest.raises(ValueError):
        model_from_checkpoint(ckpt)


def test_resume_continues_optimizer_state():
    ds = toy_dataset()
    table = toy_table()
    first = train(ds, table, TINY, seed=5)
    ckpt = make_checkpoint(first, TINY, StandardizationStats.from_dataset(ds))
    more = MixeDiTConfig(
        vocab=5, d_x=3, hidden=16, heads=2, blocks=1,
        epochs=1, batch_size=8, sample_steps=50,
    )
    second = train(ds, table, more, seed=5, init=ckpt)
    assert second.step == first.step + len(second.losses)


def test_denoiser_wrapper_matches_model():
    torch.manual_seed(2)
    model = MixeDiT(TINY)
    fn = make_denoiser(model)
    rng = np.random.default_rng(0)
    tau = np.abs(rng.standard_normal((4, 5)))
    tau /= np.linalg.norm(tau, axis=-1, keepdims=True)
    x = rng.standard_normal((4, 3))
    t = rng.uniform(0.05, 0.95, 4)
    p, eps = fn(tau, x, t, t)
    out = model(
        torch.as_tensor(tau, dtype=torch.float32),
        torch.as_tensor(x, dtype=torch.float32),
        torch.as_tensor(t, dtype=torch.float32),
        torch.as_tensor(t, dtype=torch.float32),
    )
    assert np.allclose(p, out.p_hat.detach().numpy(), atol=1e-6)
    assert np.allclose(eps, out.eps_hat.detach().numpy(), atol=1e-6)
