import math

import numpy as np
import pytest
import torch

from cyclefill.errors import ShapeError
from cyclefill.losses import (
    STYLE_WEIGHT,
    crg_training_losses,
    disc_loss,
    extract_features,
    gram,
    joint_loss,
    recon_loss,
    style_loss,
    toy_extractor,
    vgg16_style_extractor,
)
from cyclefill.models import ArchConfig, Encoder, GanCritic, Generator


# ---------------------------------------------------------------------------
# Brute-force oracles (independent of the implementations they check)
# ---------------------------------------------------------------------------

def gram_bruteforce(act: np.ndarray) -> np.ndarray:
    c, h, w = act.shape
    g = np.zeros((c, c), dtype=np.float64)
    for i in range(c):
        for j in range(c):
            for y in range(h):
                for x in range(w):
                    g[i, j] += act[i, y, x] * act[j, y, x]
    return g


def style_bruteforce(a: list, b: list) -> float:
    total = 0.0
    for fa, fb in zip(a, b):
        c, h, w = fa.shape
        k = 1.0 / (c * h * w)
        diff = k * (gram_bruteforce(fa) - gram_bruteforce(fb))
        total += np.abs(diff).sum() / (c * c)
    return total


def recon_bruteforce(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(a.astype(np.float64) - b.astype(np.float64)).sum() / a.size)


def rel_err(got: float, want: float) -> float:
    return abs(got - want) / max(abs(want), 1e-12)


# ---------------------------------------------------------------------------
# gram
# ---------------------------------------------------------------------------

def test_gram_zero_activation():
    assert (gram(torch.zeros(3, 4, 4)) == 0).all()


def test_gram_constant_single_channel_closed_form():
    v, h, w = 0.7, 5, 3
    act = torch.full((1, h, w), v, dtype=torch.float64)
    g = gram(act)
    assert g.shape == (1, 1)
    assert g.item() == pytest.approx(v * v * h * w, rel=1e-12)


def test_gram_matches_bruteforce():
    rng = np.random.default_rng(0)
    for _ in range(20):
        act = rng.normal(size=(2, 2, 2))
        got = gram(torch.from_numpy(act)).numpy()
        want = gram_bruteforce(act)
        assert np.abs(got - want).max() <= 1e-6 * max(1.0, np.abs(want).max())


def test_gram_symmetric_psd():
    rng = np.random.default_rng(1)
    act = torch.from_numpy(rng.normal(size=(4, 6, 5)))
    g = gram(act).numpy()
    assert np.allclose(g, g.T)
    eigvals = np.linalg.eigvalsh(g)
    assert eigvals.min() >= -1e-9


def test_gram_scales_quadratically():
    rng = np.random.default_rng(2)
    act = torch.from_numpy(rng.normal(size=(3, 4, 4)))
    k = 2.5
    assert torch.allclose(gram(k * act), k * k * gram(act))


# ---------------------------------------------------------------------------
# style_loss
# ---------------------------------------------------------------------------

def test_style_loss_zero_on_equal():
    rng = np.random.default_rng(3)
    stack = [torch.from_numpy(rng.normal(size=(3, 4, 4))) for _ in range(2)]
    assert style_loss(stack, [s.clone() for s in stack]).item() == 0.0


def test_style_loss_constant_maps_closed_form():
    # Single layer, 1 channel, constant maps v and w: loss = |v^2 - w^2|.
    v, w, h, ww = 0.8, 0.3, 4, 6
    a = [torch.full((1, h, ww), v, dtype=torch.float64)]
    b = [torch.full((1, h, ww), w, dtype=torch.float64)]
    assert style_loss(a, b).item() == pytest.approx(abs(v * v - w * w), rel=1e-12)


def test_style_loss_matches_bruteforce():
    rng = np.random.default_rng(4)
    for _ in range(20):
        shapes = [(2, 3, 3), (3, 2, 2)]
        a = [rng.normal(size=s) for s in shapes]
        b = [rng.normal(size=s) for s in shapes]
        got = style_loss([torch.from_numpy(x) for x in a],
                         [torch.from_numpy(x) for x in b]).item()
        assert rel_err(got, style_bruteforce(a, b)) <= 1e-6


def test_style_loss_shape_mismatch():
    with pytest.raises(ShapeError):
        style_loss([torch.zeros(2, 3, 3)], [torch.zeros(2, 4, 4)])
    with pytest.raises(ShapeError):
        style_loss([torch.zeros(2, 3, 3)], [])


# ---------------------------------------------------------------------------
# recon_loss
# ---------------------------------------------------------------------------

def test_recon_loss_zero_and_offset():
    rng = np.random.default_rng(5)
    img = rng.uniform(-1, 1, size=(4, 4, 3))
    assert recon_loss(img, img).item() == 0.0
    got = recon_loss(img + 0.1, img).item()
    assert got == pytest.approx(0.1, rel=1e-7)


def test_recon_loss_single_element_delta():
    h = w = 4
    a = np.zeros((h, w, 3))
    b = a.copy()
    b[1, 2, 0] = 0.25
    assert recon_loss(a, b).item() == pytest.approx(0.25 / (h * w * 3), rel=1e-12)


def test_recon_loss_matches_bruteforce():
    rng = np.random.default_rng(6)
    for _ in range(20):
        a = rng.normal(size=(3, 5, 4))
        b = rng.normal(size=(3, 5, 4))
        got = recon_loss(torch.from_numpy(a), torch.from_numpy(b)).item()
        assert rel_err(got, recon_bruteforce(a, b)) <= 1e-9


# ---------------------------------------------------------------------------
# joint_loss
# ---------------------------------------------------------------------------

@pytest.fixture(scope="module")
def fx64():
    return toy_extractor(seed=0).double()


def test_joint_loss_zero_when_all_equal(fx64):
    rng = np.random.default_rng(7)
    img = torch.from_numpy(rng.uniform(-1, 1, size=(3, 16, 16)))
    m = torch.from_numpy((rng.random((16, 16)) < 0.5).astype(np.float64))
    assert joint_loss(img, img, img, m, fx64).item() == 0.0


def test_joint_loss_weight_is_150(fx64):
    rng = np.random.default_rng(8)
    unet = torch.from_numpy(rng.uniform(-1, 1, size=(3, 16, 16)))
    crg = torch.from_numpy(rng.uniform(-1, 1, size=(3, 16, 16)))
    org = torch.from_numpy(rng.uniform(-1, 1, size=(3, 16, 16)))
    m = torch.from_numpy((rng.random((16, 16)) < 0.5).astype(np.float64))
    comp = m[None] * crg + (1 - m[None]) * unet
    expected = (recon_loss(unet, org)
                + 150.0 * (style_loss(fx64(unet), fx64(org))
                           + style_loss(fx64(comp), fx64(org)))).item()
    assert STYLE_WEIGHT == 150.0
    assert joint_loss(unet, crg, org, m, fx64).item() == pytest.approx(expected, rel=1e-12)


def test_joint_loss_all_ones_mask_compares_crg(fx64):
    # With no hole the composite is exactly i_crg.
    rng = np.random.default_rng(9)
    unet = torch.from_numpy(rng.uniform(-1, 1, size=(3, 16, 16)))
    crg = torch.from_numpy(rng.uniform(-1, 1, size=(3, 16, 16)))
    org = torch.from_numpy(rng.uniform(-1, 1, size=(3, 16, 16)))
    ones = torch.ones(16, 16, dtype=torch.float64)
    expected = (recon_loss(unet, org)
                + 150.0 * (style_loss(fx64(unet), fx64(org))
                           + style_loss(fx64(crg), fx64(org)))).item()
    assert joint_loss(unet, crg, org, ones, fx64).item() == pytest.approx(expected, rel=1e-12)


def test_joint_loss_gradient_matches_finite_differences(fx64):
    rng = np.random.default_rng(10)
    unet = torch.from_numpy(rng.uniform(-0.9, 0.9, size=(3, 16, 16)))
    crg = torch.from_numpy(rng.uniform(-0.9, 0.9, size=(3, 16, 16)))
    org = torch.from_numpy(rng.uniform(-0.9, 0.9, size=(3, 16, 16)))
    m = torch.from_numpy((rng.random((16, 16)) < 0.5).astype(np.float64))

    x = unet.clone().requires_grad_(True)
    joint_loss(x, crg, org, m, fx64).backward()
    analytic = x.grad.numpy().ravel()

    step = 1e-3
    flat = unet.numpy().ravel()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        for sign, slot in ((1.0, 0), (-1.0, 1)):
            probe = flat.copy()
            probe[i] += sign * step
            t = torch.from_numpy(probe.reshape(3, 16, 16))
            value = joint_loss(t, crg, org, m, fx64).item()
            if slot == 0:
                plus = value
            else:
                minus = value
        fd[i] = (plus - minus) / (2 * step)

    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1e-8)
    rel = np.abs(analytic - fd) / denom
    assert (rel <= 1e-3).mean() >= 0.95


# ---------------------------------------------------------------------------
# disc_loss
# ---------------------------------------------------------------------------

def test_disc_loss_soft_label_values():
    got = disc_loss([0.9], [0.9]).item()
    want = -(0.9 * math.log(0.9) + 0.1 * math.log(0.1))
    assert got == pytest.approx(want, rel=1e-9)
    assert got == pytest.approx(0.3251, abs=5e-5)
    assert disc_loss([0.5, 0.5], [0.9, 0.1]).item() == pytest.approx(math.log(2), rel=1e-9)


def test_disc_loss_minimized_at_soft_target():
    target = 0.9
    at_target = disc_loss([target], [target]).item()
    for s in (0.1, 0.5, 0.8, 0.95, 0.99):
        assert disc_loss([s], [target]).item() >= at_target


def test_disc_loss_finite_at_extremes():
    for s in (0.0, 1.0):
        for t in (0.1, 0.9):
            assert math.isfinite(disc_loss([s], [t]).item())


# ---------------------------------------------------------------------------
# crg_training_losses
# ---------------------------------------------------------------------------

def test_crg_losses_smoke_and_identities():
    arch = ArchConfig(resolution=32, latent_dim=16, base_channels=8)
    torch.manual_seed(0)
    g, e, critic = Generator(arch), Encoder(arch), GanCritic(arch)
    g.eval(), e.eval(), critic.eval()  # freeze batch-norm stats for the check
    real = torch.rand(2, 3, 32, 32) * 2 - 1
    z = torch.randn(2, 16)
    losses = crg_training_losses(g, e, critic, real, z)
    assert set(losses) == {"gen_adv", "disc_adv", "latent_recon", "image_recon"}
    for name, value in losses.items():
        v = value.item()
        assert math.isfinite(v) and v > 0, name

    class ExactInverse(torch.nn.Module):
        def forward(self, img):
            return z

    losses = crg_training_losses(g, ExactInverse(), critic, real, z)
    assert losses["latent_recon"].item() == 0.0

    class IdentityG(torch.nn.Module):
        def forward(self, latent):
            return real

    losses = crg_training_losses(IdentityG(), e, critic, real, z)
    assert losses["image_recon"].item() == 0.0


# ---------------------------------------------------------------------------
# Feature extractor
# ---------------------------------------------------------------------------

def test_extractor_tap_shapes_and_channels():
    fx = vgg16_style_extractor(seed=0)
    img = torch.rand(3, 128, 128) * 2 - 1
    taps = extract_features(fx, img.float())
    assert [t.shape[0] for t in taps] == [64, 128, 256]
    assert [t.shape[1] for t in taps] == [64, 32, 16]


def test_extractor_frozen_and_deterministic():
    fx = vgg16_style_extractor(seed=0)
    assert all(not p.requires_grad for p in fx.parameters())
    img = (torch.rand(3, 64, 64) * 2 - 1).float()
    a = extract_features(fx, img)
    b = extract_features(fx, img)
    for ta, tb in zip(a, b):
        assert (ta == tb).all()
    fx2 = vgg16_style_extractor(seed=0)
    for ta, tb in zip(a, extract_features(fx2, img)):
        assert (ta == tb).all()


def test_extractor_too_small_input():
    fx = vgg16_style_extractor(seed=0)
    with pytest.raises(ShapeError):
        fx((torch.rand(3, 16, 16) * 2 - 1).float())
