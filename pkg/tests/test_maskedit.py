import math
import types

import numpy as np
import pytest
import torch

from evtol_sbi.checkpoints import (
    StandardizationStats,
    load_checkpoint,
    save_checkpoint,
)
from evtol_sbi.design_space import (
    N_FEATURES,
    mask_for_topology,
    topology_from_index,
)
from evtol_sbi.errors import NonFiniteLoss, SingularTime
from evtol_sbi.maskedit import (
    MASK_MIXTURE_VERSION,
    MaskeDiT,
    MaskeDiTConfig,
    combined_mask,
    em_walk,
    feature_key_digest,
    make_checkpoint,
    make_denoiser,
    masked_denoising_loss,
    model_from_checkpoint,
    noise_to_score,
    sample,
    sample_condition_mask,
    topology_mask,
    train,
)

TINY = MaskeDiTConfig(
    d_theta=6, d_x=2, layers=2, heads=2, key_size=4,
    d_id=8, d_value=8, d_cond=4, d_time=8,
    steps=50, epochs=2, batch_size=8,
)


def tiny_dataset(n=24, seed=0):
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        k = int(rng.integers(2, 7))
        mask = np.zeros(6)
        mask[:k] = 1.0
        theta = np.where(mask > 0, rng.standard_normal(6), np.nan)
        x = rng.standard_normal(2)
        rows.append(types.SimpleNamespace(theta=theta, x=x, mask=mask))
    theta_all = np.stack([r.theta for r in rows])
    x_all = np.stack([r.x for r in rows])
    return types.SimpleNamespace(
        rows=rows,
        theta_mean=np.nanmean(theta_all, axis=0),
        theta_std=np.nanstd(theta_all, axis=0),
        x_mean=x_all.mean(axis=0),
        x_std=x_all.std(axis=0),
    )


# --- masks ---

def test_condition_mask_shapes_and_arms():
    rng = np.random.default_rng(0)
    m = sample_condition_mask(rng)
    assert m.shape == (136,)
    assert set(np.unique(m)) <= {0.0, 1.0}


def test_condition_mask_mixture_hand_case():
    # toy dims d_theta=3, d_x=2: P(posterior pattern) =
    # 1/5 + (0.7^3 0.3^2 + 0.3^3 0.7^2)/5 = 0.208820
    rng = np.random.default_rng(42)
    target = np.array([0.0, 0.0, 0.0, 1.0, 1.0])
    n = 200_000
    hits = 0
    for _ in range(n):
        if np.array_equal(sample_condition_mask(rng, 3, 2), target):
            hits += 1
    p = hits / n
    assert abs(p - 0.208820) <= 0.004  # ~4 sigma of the MC estimate


def test_condition_mask_arm_frequencies():
    rng = np.random.default_rng(7)
    d_theta, d_x = 126, 10
    counts = {"joint": 0, "posterior": 0, "likelihood": 0, "b03": 0, "b07": 0}
    post = np.concatenate([np.zeros(d_theta), np.ones(d_x)])
    like = np.concatenate([np.ones(d_theta), np.zeros(d_x)])
    n = 100_000
    for _ in range(n):
        m = sample_condition_mask(rng, d_theta, d_x)
        if not m.any():
            counts["joint"] += 1
        elif np.array_equal(m, post):
            counts["posterior"] += 1
        elif np.array_equal(m, like):
            counts["likelihood"] += 1
        elif m.mean() < 0.5:
            counts["b03"] += 1
        else:
            counts["b07"] += 1
    for arm, c in counts.items():
        assert abs(c / n - 0.2) <= 0.01, arm


def test_combined_mask_cases():
    assert not combined_mask(np.ones(4), np.ones(4)).any()
    m = combined_mask(np.array([0, 0, 1, 1.0]), np.array([1, 0, 1, 0.0]))
    assert m.tolist() == [1.0, 0.0, 0.0, 0.0]
    with pytest.raises(ValueError):
        combined_mask(np.ones(3), np.ones(4))


def test_topology_mask_from_topology():
    topo = topology_from_index(0)
    cfg = MaskeDiTConfig()
    m = topology_mask(topo, cfg)
    assert m.shape == (136,)
    assert np.all(m[N_FEATURES:] == 1.0)
    assert np.array_equal(m[:N_FEATURES], mask_for_topology(topo))


def test_topology_mask_from_array_checks_observation_slots():
    cfg = TINY
    full = np.ones(cfg.d_max)
    assert np.array_equal(topology_mask(full, cfg), full)
    bad = full.copy()
    bad[-1] = 0.0
    with pytest.raises(ValueError):
        topology_mask(bad, cfg)
    with pytest.raises(ValueError):
        topology_mask(np.ones(3), cfg)


# --- score conversion ---

def test_noise_to_score_values():
    eps = np.array([2.0, -4.0])
    assert np.allclose(noise_to_score(eps, 0.0), -eps)
    assert np.allclose(noise_to_score(eps, 0.6), -1.25 * eps)
    with pytest.raises(SingularTime):
        noise_to_score(eps, 1.0)


def test_optimal_noise_gives_unit_gaussian_score():
    # z1 ~ N(0,1): marginal of z_t stays N(0,1), score is -z
    t = 0.37
    beta = math.sqrt(1.0 - t * t)
    z = np.linspace(-2.0, 2.0, 9)
    eps_opt = beta * z  # E[eps | z_t=z] for unit Gaussian data
    assert np.max(np.abs(noise_to_score(eps_opt, t) - (-z))) <= 1e-6


# --- model contracts ---

def test_token_width_is_paper_dimension():
    assert MaskeDiTConfig().token_dim == 160


def test_forward_shape_and_absent_slot_isolation():
    torch.manual_seed(0)
    model = MaskeDiT(TINY)
    model.eval()
    rng = np.random.default_rng(3)
    for _ in range(5):
        m_tau = (rng.random(8) < 0.7).astype(np.float64)
        m_tau[6:] = 1.0
        m_c = sample_condition_mask(rng, 6, 2) * m_tau
        z = rng.standard_normal((1, 8))
        vals = rng.standard_normal((1, 8)) * m_c
        args = lambda zz: (
            torch.as_tensor(zz, dtype=torch.float32),
            torch.as_tensor(vals, dtype=torch.float32),
            torch.as_tensor(m_c[None], dtype=torch.float32),
            torch.as_tensor(m_tau[None], dtype=torch.float32),
            torch.full((1,), 0.5),
        )
        with torch.no_grad():
            out = model(*args(z))
            assert out.shape == (1, 8)
            assert torch.all(out[0, m_tau == 0] == 0.0)
            z2 = z + rng.standard_normal((1, 8)) * (m_tau == 0)
            out2 = model(*args(z2))
        # bit-level: absent-slot perturbations cannot reach present slots
        assert torch.equal(out[0, m_tau > 0], out2[0, m_tau > 0])


def test_absent_slot_gradients_exactly_zero():
    torch.manual_seed(1)
    model = MaskeDiT(TINY)
    m_tau = torch.tensor([[1.0, 1, 0, 1, 0, 1, 1, 1]])
    m_c = torch.zeros(1, 8)
    z = torch.randn(1, 8, requires_grad=True)
    out = model(z, torch.zeros(1, 8), m_c, m_tau, torch.full((1,), 0.4))
    out.square().sum().backward()
    assert torch.all(z.grad[0, 2] == 0.0)
    assert torch.all(z.grad[0, 4] == 0.0)


def test_attention_support_blocks_unobserved_to_observed():
    m_tau = torch.tensor([[1.0, 1.0, 1.0, 0.0]])
    m_c = torch.tensor([[1.0, 0.0, 0.0, 0.0]])
    allowed = MaskeDiT.attention_support(m_c, m_tau)[0]
    # observed slot 0 may not read unobserved slots 1, 2
    assert not allowed[0, 1] and not allowed[0, 2]
    # unobserved slots may read the observed one
    assert allowed[1, 0] and allowed[2, 0]
    # absent slot 3 exchanges nothing except its self-edge
    assert not allowed[3, :3].any() and not allowed[:3, 3].any()
    assert allowed[0, 0] and allowed[3, 3]


def test_conditioned_tokens_see_only_conditioned_context():
    # changing an unobserved slot's value must not move any output through
    # attention when every other slot is conditioned
    torch.manual_seed(4)
    model = MaskeDiT(TINY)
    model.eval()
    m_tau = torch.ones(1, 8)
    m_c = torch.tensor([[1.0, 1, 1, 1, 1, 1, 1, 0]])
    vals = torch.randn(1, 8) * m_c
    z = torch.randn(1, 8)
    z2 = z.clone()
    z2[0, 7] += 3.0
    with torch.no_grad():
        a = model(z, vals, m_c, m_tau, torch.full((1,), 0.3))
        b = model(z2, vals, m_c, m_tau, torch.full((1,), 0.3))
    assert torch.equal(a[0, :7], b[0, :7])
    assert a[0, 7] != b[0, 7]


# --- loss ---

def test_loss_single_active_slot():
    eps_hat = torch.tensor([[1.0, 3.0, 0.0]])
    eps = torch.tensor([[1.0, 1.0, 9.0]])
    m = torch.tensor([[0.0, 1.0, 0.0]])
    assert masked_denoising_loss(eps_hat, eps, m).item() == pytest.approx(4.0)


def test_loss_ignores_empty_mask_rows():
    eps_hat = torch.tensor([[2.0, 0.0], [5.0, 5.0]])
    eps = torch.zeros(2, 2)
    m = torch.tensor([[1.0, 1.0], [0.0, 0.0]])
    # second row would dominate if it entered the normalizer
    assert masked_denoising_loss(eps_hat, eps, m).item() == pytest.approx(2.0)


def test_loss_invariant_to_active_count():
    # same per-slot error on k and 3k active slots gives the same loss
    err = 0.7
    for k in (1, 3):
        eps_hat = torch.full((1, 9), err)
        eps = torch.zeros(1, 9)
        m = torch.zeros(1, 9)
        m[0, : 3 * k] = 1.0
        got = masked_denoising_loss(eps_hat, eps, m).item()
        assert got == pytest.approx(err * err)


def test_all_empty_batch_gives_zero_loss():
    eps_hat = torch.randn(3, 4)
    m = torch.zeros(3, 4)
    assert masked_denoising_loss(eps_hat, torch.zeros(3, 4), m).item() == 0.0


# --- training ---

def test_training_bitwise_reproducible():
    ds = tiny_dataset()
    a = train(ds, TINY, seed=9)
    b = train(ds, TINY, seed=9)
    assert a.train_losses == b.train_losses
    assert a.val_losses == b.val_losses
    assert a.best_epoch == b.best_epoch
    for k, v in a.model.state_dict().items():
        assert torch.equal(v, b.model.state_dict()[k])


def test_training_selects_lowest_validation_epoch():
    ds = tiny_dataset()
    res = train(ds, TINY, seed=2)
    assert res.best_epoch == int(np.argmin(res.val_losses))
    assert res.best_val == min(res.val_losses)


def test_non_finite_loss_carries_batch_seed():
    ds = tiny_dataset()
    for r in ds.rows:
        r.x = np.array([np.inf, 0.0])
    ds.x_mean = np.zeros(2)
    ds.x_std = np.ones(2)
    with pytest.raises(NonFiniteLoss) as exc:
        train(ds, TINY, seed=0)
    assert exc.value.batch_seed is not None


# --- sampling ---

def analytic_gaussian_eps(mu, sd):
    def fn(z, u):
        b2 = 1.0 - u * u
        return math.sqrt(b2) * (z - u * mu) / (u * u * sd * sd + b2)

    return fn


def test_em_walk_recovers_gaussian_moments():
    cfg = MaskeDiTConfig(
        d_theta=3, d_x=1, layers=2, heads=2, key_size=4,
        d_id=8, d_value=8, d_cond=4, d_time=8, steps=500,
    )
    denoise = analytic_gaussian_eps(1.0, 0.5)
    d = 4
    z = em_walk(
        denoise, cfg, 2000, d,
        np.zeros(d), np.zeros(d), np.ones(d), np.random.default_rng(1),
    )
    assert abs(z.mean() - 1.0) <= 0.05
    assert abs(z.std() - 0.5) <= 0.05


def test_em_walk_freezes_conditioned_and_absent_slots():
    cfg = TINY
    d = cfg.d_max
    m_c = np.zeros(d)
    m_c[0] = 1.0
    m_tau = np.ones(d)
    m_tau[3] = 0.0
    values = np.zeros(d)
    values[0] = 2.5

    calls = []

    def denoise(z, u):
        calls.append(z.copy())
        return np.zeros_like(z)

    z = em_walk(
        denoise, cfg, 4, d, m_c, values, m_tau, np.random.default_rng(0)
    )
    assert np.all(z[:, 0] == 2.5)
    assert np.all(z[:, 3] == 0.0)
    # imposed before the first denoiser call, not only at the end
    assert np.all(calls[0][:, 0] == 2.5)
    assert np.all(calls[0][:, 3] == 0.0)


def test_sample_conditioning_and_sentinels():
    torch.manual_seed(0)
    model = MaskeDiT(TINY)
    m_tau = np.ones(TINY.d_max)
    m_tau[4] = 0.0
    m_c = np.zeros(TINY.d_max)
    m_c[1] = 1.0
    values = np.zeros(TINY.d_max)
    values[1] = -0.75
    z = sample(model, TINY, m_tau, condition=(m_c, values), seed=5, n=3)
    assert z.shape == (3, TINY.d_max)
    assert np.all(z[:, 1] == -0.75)
    assert np.all(np.isnan(z[:, 4]))
    assert np.isfinite(z[:, [0, 2, 3, 5, 6, 7]]).all()


def test_sample_rejects_conditioning_on_absent_slot():
    model = MaskeDiT(TINY)
    m_tau = np.ones(TINY.d_max)
    m_tau[2] = 0.0
    m_c = np.zeros(TINY.d_max)
    m_c[2] = 1.0
    with pytest.raises(ValueError):
        sample(model, TINY, m_tau, condition=(m_c, np.zeros(TINY.d_max)))


def test_sample_rejects_non_finite_condition_values():
    model = MaskeDiT(TINY)
    m_c = np.zeros(TINY.d_max)
    m_c[0] = 1.0
    vals = np.zeros(TINY.d_max)
    vals[0] = np.nan
    with pytest.raises(ValueError):
        sample(model, TINY, np.ones(TINY.d_max), condition=(m_c, vals))


# --- checkpointing ---

def test_checkpoint_roundtrip_and_extras(tmp_path):
    ds = tiny_dataset()
    res = train(ds, TINY, seed=4)
    stats = StandardizationStats.from_dataset(ds)
    ckpt = make_checkpoint(res, TINY, stats)
    assert ckpt.extra["mask_mixture_version"] == MASK_MIXTURE_VERSION
    assert ckpt.extra["feature_key_digest"] == feature_key_digest()
    assert ckpt.extra["best_epoch"] == res.best_epoch

    path = tmp_path / "m.npz"
    save_checkpoint(path, ckpt)
    loaded = load_checkpoint(path)
    model, cfg, _ = model_from_checkpoint(loaded, use_ema=False)
    assert cfg == TINY
    z = torch.randn(2, TINY.d_max)
    v = torch.zeros(2, TINY.d_max)
    mc = torch.zeros(2, TINY.d_max)
    mt = torch.ones(2, TINY.d_max)
    t = torch.full((2,), 0.5)
    with torch.no_grad():
        assert torch.allclose(
            res.model(z, v, mc, mt, t), model(z, v, mc, mt, t), atol=1e-12
        )


def test_checkpoint_kind_guard():
    ds = tiny_dataset()
    res = train(ds, TINY, seed=1)
    ckpt = make_checkpoint(res, TINY, StandardizationStats.from_dataset(ds))
    ckpt.kind = "mixedit"
    with pytest.raises(ValueError):
        model_from_checkpoint(ckpt)


def test_resume_continues_step_counter():
    ds = tiny_dataset()
    first = train(ds, TINY, seed=6)
    ckpt = make_checkpoint(first, TINY, StandardizationStats.from_dataset(ds))
    cfg2 = MaskeDiTConfig(
        d_theta=6, d_x=2, layers=2, heads=2, key_size=4,
        d_id=8, d_value=8, d_cond=4, d_time=8,
        steps=50, epochs=1, batch_size=8,
    )
    second = train(ds, cfg2, seed=6, init=ckpt)
    assert second.step > first.step


def test_denoiser_wrapper_matches_model():
    torch.manual_seed(3)
    model = MaskeDiT(TINY)
    d = TINY.d_max
    m_c = np.zeros(d)
    values = np.zeros(d)
    m_tau = np.ones(d)
    fn = make_denoiser(model, m_c, values, m_tau)
    z = np.random.default_rng(0).standard_normal((3, d))
    got = fn(z, 0.4)
    with torch.no_grad():
        want = model(
            torch.as_tensor(z, dtype=torch.float32),
            torch.zeros(3, d),
            torch.zeros(3, d),
            torch.ones(3, d),
            torch.full((3,), 0.4),
        )
    assert np.allclose(got, want.double().numpy(), atol=1e-6)
