"""Differentiable objectives: Gram-matrix style loss, per-pixel reconstruction,
the weighted joint refiner loss, smoothed-label discriminator cross-entropy,
and the generator/encoder training losses; plus the frozen perceptual
feature extractor they depend on.

Tensor conventions: torch tensors are channel-first, (C, H, W) or (B, C, H, W);
numpy arrays are treated as channel-last canonical images and converted.
"""

import numpy as np
import torch
from torch import nn

from .errors import ShapeError

# Joint-loss weight on the two style terms.
STYLE_WEIGHT = 150.0

BCE_EPS = 1e-7

# Backbone input normalization (images first mapped from [-1, 1] to [0, 1]).
IMAGENET_MEAN = (0.485, 0.456, 0.406)
IMAGENET_STD = (0.229, 0.224, 0.225)


def _as_chw(x) -> torch.Tensor:
    """Accept a (B,C,H,W)/(C,H,W) tensor or an (H,W,3) numpy image."""
    if isinstance(x, np.ndarray):
        if x.ndim == 3 and x.shape[2] == 3:
            x = x.transpose(2, 0, 1)
        return torch.from_numpy(np.ascontiguousarray(x))
    return x


def _as_mask(m, like: torch.Tensor) -> torch.Tensor:
    """Mask (H,W) -> broadcastable over `like` ((1,H,W) or (B,1,H,W))."""
    if isinstance(m, np.ndarray):
        m = torch.from_numpy(np.ascontiguousarray(m))
    m = m.to(like.dtype)
    if m.dim() == 2:
        m = m[None] if like.dim() == 3 else m[None, None]
    if m.shape[-2:] != like.shape[-2:]:
        raise ShapeError(f"mask {tuple(m.shape[-2:])} does not match image "
                         f"{tuple(like.shape[-2:])}")
    return m


# ---------------------------------------------------------------------------
# Style machinery
# ---------------------------------------------------------------------------

def gram(act) -> torch.Tensor:
    """Unnormalized channel covariance: G[c, c'] = sum_hw act[c]*act[c'].

    Accepts (C, H, W) or (B, C, H, W); normalization is applied by style_loss.
    """
    act = _as_chw(act)
    if act.dim() == 3:
        flat = act.flatten(1)
        return flat @ flat.T
    if act.dim() == 4:
        flat = act.flatten(2)
        return torch.bmm(flat, flat.transpose(1, 2))
    raise ShapeError(f"activation must be 3-D or 4-D, got {act.dim()}-D")


def style_loss(a, b) -> torch.Tensor:
    """Sum over layers j of (1/C_j^2) * || K_j * (G(a_j) - G(b_j)) ||_1,
    K_j = 1/(C_j*H_j*W_j), with the entrywise-absolute-sum norm.

    a and b are feature stacks (equal-length lists of activation maps with
    matching shapes). Batched stacks are averaged over the batch.
    """
    if len(a) != len(b):
        raise ShapeError(f"feature stacks have {len(a)} vs {len(b)} layers")
    if not len(a):
        raise ShapeError("feature stacks are empty")
    total = None
    for layer, (fa, fb) in enumerate(zip(a, b)):
        fa, fb = _as_chw(fa), _as_chw(fb)
        if fa.shape != fb.shape:
            raise ShapeError(f"layer {layer}: shapes {tuple(fa.shape)} vs "
                             f"{tuple(fb.shape)} differ")
        c, h, w = fa.shape[-3:]
        k = 1.0 / (c * h * w)
        diff = (k * (gram(fa) - gram(fb))).abs().sum(dim=(-2, -1)) / (c * c)
        term = diff.mean() if diff.dim() else diff
        total = term if total is None else total + term
    return total


def recon_loss(i_unet, i_org) -> torch.Tensor:
    """Mean absolute difference over all elements (H*W*3 per image)."""
    a, b = _as_chw(i_unet), _as_chw(i_org)
    if a.shape != b.shape:
        raise ShapeError(f"shapes {tuple(a.shape)} vs {tuple(b.shape)} differ")
    return (a - b).abs().mean()


def joint_loss(i_unet, i_crg, i_org, m, fx) -> torch.Tensor:
    """Refiner objective: recon + 150*(style(unet vs org) + style(comp vs org)),
    where comp = m*i_crg + (1-m)*i_unet."""
    i_unet, i_crg, i_org = _as_chw(i_unet), _as_chw(i_crg), _as_chw(i_org)
    if not i_unet.shape == i_crg.shape == i_org.shape:
        raise ShapeError("joint_loss images must share one shape")
    mask = _as_mask(m, i_unet)
    i_comp = mask * i_crg + (1.0 - mask) * i_unet
    org_feats = fx(i_org)
    style_unet = style_loss(fx(i_unet), org_feats)
    style_comp = style_loss(fx(i_comp), org_feats)
    return recon_loss(i_unet, i_org) + STYLE_WEIGHT * (style_unet + style_comp)


def disc_loss(scores, labels) -> torch.Tensor:
    """Mean binary cross-entropy of sigmoid scores against soft targets,
    scores clamped to [eps, 1-eps]."""
    s = torch.as_tensor(scores, dtype=torch.float64) \
        if not isinstance(scores, torch.Tensor) else scores
    t = torch.as_tensor(labels, dtype=s.dtype, device=s.device)
    if s.shape != t.shape:
        raise ShapeError(f"scores {tuple(s.shape)} vs labels {tuple(t.shape)}")
    s = s.clamp(BCE_EPS, 1.0 - BCE_EPS)
    return -(t * s.log() + (1.0 - t) * (1.0 - s).log()).mean()


def crg_training_losses(g, e, critic, real, z) -> dict:
    """Non-saturating adversarial losses plus the two inversion losses.

    disc_adv/gen_adv use the transient GAN critic (logit output); latent_recon
    is MSE of e(g(z)) against z; image_recon is L1 of g(e(x)) against x.
    """
    fake = g(z)
    ones_real = torch.ones(real.shape[0], device=real.device)
    ones_fake = torch.ones(fake.shape[0], device=fake.device)
    zeros_fake = torch.zeros(fake.shape[0], device=fake.device)
    bce = nn.functional.binary_cross_entropy_with_logits
    disc_adv = bce(critic(real), ones_real) + bce(critic(fake.detach()), zeros_fake)
    gen_adv = bce(critic(fake), ones_fake)
    latent_recon = ((e(fake) - z) ** 2).mean()
    image_recon = (g(e(real)) - real).abs().mean()
    return {"gen_adv": gen_adv, "disc_adv": disc_adv,
            "latent_recon": latent_recon, "image_recon": image_recon}


# ---------------------------------------------------------------------------
# Feature extraction
# ---------------------------------------------------------------------------

class FeatureExtractor(nn.Module):
    """Frozen convolutional backbone with tapped pooling outputs.

    Input is a canonical [-1, 1] image; it is mapped to [0, 1] and normalized
    per channel before the forward pass. Weights never train.
    """

    def __init__(self, layers, tap_indices, input_mean=IMAGENET_MEAN,
                 input_std=IMAGENET_STD):
        super().__init__()
        self.features = nn.Sequential(*layers)
        self.tap_indices = tuple(tap_indices)
        self.register_buffer("input_mean", torch.tensor(input_mean).view(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(input_std).view(1, 3, 1, 1))
        for p in self.parameters():
            p.requires_grad_(False)
        self.eval()

    def train(self, mode: bool = True):
        return super().train(False)  # permanently frozen

    @property
    def num_taps(self) -> int:
        return len(self.tap_indices)

    def forward(self, img) -> list:
        x = _as_chw(img)
        squeeze = x.dim() == 3
        if squeeze:
            x = x[None]
        min_side = 4 * (2 ** self.num_taps)
        if x.shape[-1] < min_side or x.shape[-2] < min_side:
            raise ShapeError(f"input {tuple(x.shape[-2:])} too small for "
                             f"{self.num_taps} pooling taps (needs >= {min_side})")
        mean = self.input_mean.to(x.dtype)
        std = self.input_std.to(x.dtype)
        x = ((x + 1.0) * 0.5 - mean) / std
        taps = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.tap_indices:
                taps.append(x[0] if squeeze else x)
        return taps


def extract_features(fx: FeatureExtractor, img) -> list:
    """Tapped activation maps, shallow to deep."""
    return fx(img)


def _seeded_conv(c_in, c_out, k, gen):
    conv = nn.Conv2d(c_in, c_out, k, padding=k // 2)
    fan_in = c_in * k * k
    with torch.no_grad():
        conv.weight.copy_(torch.randn(conv.weight.shape, generator=gen)
                          * (2.0 / fan_in) ** 0.5)
        conv.bias.zero_()
    return conv


def vgg16_style_extractor(seed: int = 0, weights_npz=None) -> FeatureExtractor:
    """VGG-16 layout through the third pooling stage (taps at 64/128/256
    channels). Weights come from `weights_npz` if given (arrays named
    conv{i}.weight / conv{i}.bias in layer order), else a fixed-seed random
    initialization; either way the extractor is frozen.
    """
    gen = torch.Generator().manual_seed(seed)
    plan = [(3, 64), (64, 64), "pool",
            (64, 128), (128, 128), "pool",
            (128, 256), (256, 256), (256, 256), "pool"]
    layers, taps = [], []
    for step in plan:
        if step == "pool":
            layers.append(nn.MaxPool2d(2))
            taps.append(len(layers) - 1)
        else:
            layers.append(_seeded_conv(*step, 3, gen))
            layers.append(nn.ReLU(inplace=True))
    fx = FeatureExtractor(layers, taps)
    if weights_npz is not None:
        data = np.load(weights_npz)
        convs = [l for l in fx.features if isinstance(l, nn.Conv2d)]
        with torch.no_grad():
            for i, conv in enumerate(convs):
                conv.weight.copy_(torch.from_numpy(data[f"conv{i}.weight"]))
                conv.bias.copy_(torch.from_numpy(data[f"conv{i}.bias"]))
    return fx


def toy_extractor(seed: int = 0, channels=(4, 8)) -> FeatureExtractor:
    """Small fixed-seed two-tap extractor for tests and gradient checks."""
    gen = torch.Generator().manual_seed(seed)
    layers, taps = [], []
    c_in = 3
    for c_out in channels:
        layers += [_seeded_conv(c_in, c_out, 3, gen), nn.ReLU(inplace=True),
                   nn.MaxPool2d(2)]
        taps.append(len(layers) - 1)
        c_in = c_out
    return FeatureExtractor(layers, taps)
