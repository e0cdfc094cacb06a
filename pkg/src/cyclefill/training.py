"""Training pipelines for the generator/encoder pair, the artifact
discriminator, and the refiner Unet.

All pipelines share: seed-deterministic batching (single worker), a
hash-of-key 90/10 train/val split, best-checkpoint selection on validation
loss, per-epoch CSV reports, and an out_dir layout of checkpoints/, reports/,
and a best.json marker.
"""

import configparser
import csv
import hashlib
import json
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import torch

from . import losses as L
from .distortion import FAKE_LABEL, REAL_LABEL
from .errors import ConfigError
from .models import (
    ArchConfig,
    ArtifactDiscriminator,
    Encoder,
    GanCritic,
    Generator,
    ModelBundle,
    RefinerUnet,
    save_bundle,
)

PIPELINES = ("crg", "discriminator", "refiner")


@dataclass
class TrainConfig:
    pipeline: str
    epochs: int
    batch_size: int
    optimizer: str
    lr: float
    lr_plateau_patience: int = 0    # epochs without a new val minimum; 0 = off
    lr_plateau_factor: float = 2.0  # divide lr by this on plateau
    augment_shift: float = 0.0      # max shift as a fraction of the image side
    augment_flip: bool = False
    val_fraction: float = 0.1
    data_dir: str = None
    out_dir: str = None
    seed: int = 0
    rmsprop_rho: float = 0.9
    rmsprop_eps: float = 1e-8
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    gan_epochs: int = 10  # crg phase 1 (generator + critic)

    def __post_init__(self):
        if self.pipeline not in PIPELINES:
            raise ConfigError(f"unknown pipeline {self.pipeline!r}")
        if self.optimizer not in ("adam", "rmsprop"):
            raise ConfigError(f"optimizer must be adam or rmsprop, got {self.optimizer!r}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")


def default_config(pipeline: str) -> TrainConfig:
    """Published recipe per pipeline (the crg recipe is this artifact's own)."""
    if pipeline == "refiner":
        return TrainConfig(pipeline="refiner", epochs=100, batch_size=16,
                           optimizer="adam", lr=0.0002,
                           augment_shift=0.1, augment_flip=True)
    if pipeline == "discriminator":
        return TrainConfig(pipeline="discriminator", epochs=300, batch_size=128,
                           optimizer="rmsprop", lr=0.0001,
                           lr_plateau_patience=15, lr_plateau_factor=2.0)
    if pipeline == "crg":
        return TrainConfig(pipeline="crg", epochs=20, batch_size=32,
                           optimizer="adam", lr=0.0002, gan_epochs=10)
    raise ConfigError(f"unknown pipeline {pipeline!r}")


def config_from_file(path, pipeline: str) -> TrainConfig:
    """INI config: one [pipeline] section of key=value overrides on defaults."""
    parser = configparser.ConfigParser()
    read = parser.read(path)
    if not read:
        raise ConfigError(f"config file {path} not found or unreadable")
    cfg = default_config(pipeline)
    if pipeline not in parser:
        return cfg
    overrides = {}
    known = set(cfg.__dataclass_fields__)
    for key, raw in parser[pipeline].items():
        if key not in known:
            raise ConfigError(f"{path} [{pipeline}]: unknown key {key!r}")
        current = getattr(cfg, key)
        try:
            if isinstance(current, bool):
                overrides[key] = parser[pipeline].getboolean(key)
            elif isinstance(current, int):
                overrides[key] = int(raw)
            elif isinstance(current, float):
                overrides[key] = float(raw)
            else:
                overrides[key] = raw
        except ValueError as exc:
            raise ConfigError(f"{path} [{pipeline}] {key}: {exc}") from exc
    return replace(cfg, **overrides)


@dataclass
class TrainReport:
    pipeline: str
    train_losses: list = field(default_factory=list)
    val_losses: list = field(default_factory=list)
    best_epoch: int = -1
    checkpoint_paths: dict = field(default_factory=dict)
    wall_clock_s: float = 0.0
    extras: dict = field(default_factory=dict)

    @property
    def best_val_loss(self) -> float:
        return self.val_losses[self.best_epoch] if self.best_epoch >= 0 else math.inf


# ---------------------------------------------------------------------------
# Shared machinery
# ---------------------------------------------------------------------------

class PlateauHalver:
    """Divide the LR by `factor` when no new validation minimum has occurred
    for `patience` epochs; the wait counter restarts after each cut."""

    def __init__(self, optimizer, patience: int, factor: float = 2.0):
        self.optimizer = optimizer
        self.patience = patience
        self.factor = factor
        self.best = math.inf
        self.stale = 0
        self.events = []

    @property
    def lr(self) -> float:
        return self.optimizer.param_groups[0]["lr"]

    def step(self, val_loss: float, epoch: int) -> bool:
        if val_loss < self.best:
            self.best = val_loss
            self.stale = 0
            return False
        self.stale += 1
        if self.patience and self.stale >= self.patience:
            for group in self.optimizer.param_groups:
                group["lr"] /= self.factor
            self.stale = 0
            self.events.append(epoch)
            return True
        return False


def split_train_val(keys, val_fraction: float, seed: int):
    """Deterministic hash-of-key split; both sides guaranteed non-empty."""
    train_idx, val_idx = [], []
    threshold = int(round(val_fraction * 100))
    for i, key in enumerate(keys):
        digest = hashlib.md5(f"{seed}:{key}".encode()).hexdigest()
        (val_idx if int(digest, 16) % 100 < threshold else train_idx).append(i)
    if not val_idx:
        val_idx.append(train_idx.pop())
    if not train_idx:
        train_idx.append(val_idx.pop())
    return train_idx, val_idx


def _make_optimizer(cfg: TrainConfig, params):
    if cfg.optimizer == "adam":
        return torch.optim.Adam(params, lr=cfg.lr,
                                betas=(cfg.adam_beta1, cfg.adam_beta2))
    return torch.optim.RMSprop(params, lr=cfg.lr, alpha=cfg.rmsprop_rho,
                               eps=cfg.rmsprop_eps)


def _out_dirs(cfg: TrainConfig):
    if cfg.out_dir is None:
        return None, None
    out = Path(cfg.out_dir)
    ckpt = out / "checkpoints"
    reports = out / "reports"
    ckpt.mkdir(parents=True, exist_ok=True)
    reports.mkdir(parents=True, exist_ok=True)
    return ckpt, reports


def _write_report_files(cfg: TrainConfig, report: TrainReport, columns=None):
    if cfg.out_dir is None:
        return
    _, reports = _out_dirs(cfg)
    with open(reports / "losses.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        header = ["epoch", "train_loss", "val_loss"] + list(columns or [])
        writer.writerow(header)
        for epoch, (tr, va) in enumerate(zip(report.train_losses, report.val_losses)):
            row = [epoch, f"{tr:.6f}", f"{va:.6f}"]
            for col in columns or []:
                row.append(f"{report.extras[col][epoch]:.6f}")
            writer.writerow(row)
    with open(Path(cfg.out_dir) / "best.json", "w") as fh:
        json.dump({"best_epoch": report.best_epoch,
                   "best_val_loss": report.best_val_loss,
                   "checkpoints": {k: str(v) for k, v in
                                   report.checkpoint_paths.items()}}, fh, indent=1)


def _images_to_tensor(images) -> torch.Tensor:
    arr = np.stack([np.ascontiguousarray(img.transpose(2, 0, 1)) for img in images])
    return torch.from_numpy(arr)


def _epoch_batches(n: int, batch_size: int, rng: np.random.Generator):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


# ---------------------------------------------------------------------------
# Artifact discriminator
# ---------------------------------------------------------------------------

def train_discriminator(cfg: TrainConfig, dataset, arch: ArchConfig = None) -> tuple:
    """Train the scorer on labeled samples; returns (report, bundle).

    dataset: list of LabeledSample (labels 0.9 real / 0.1 fake). The bundle is
    partial (artifact_discriminator only).
    """
    labels = {s.label for s in dataset}
    if labels != {REAL_LABEL, FAKE_LABEL}:
        raise ConfigError(f"dataset must contain both labels, got {sorted(labels)}")
    arch = arch or ArchConfig(resolution=dataset[0].image.shape[0])
    torch.manual_seed(cfg.seed)
    disc = ArtifactDiscriminator(arch)
    optimizer = _make_optimizer(cfg, disc.parameters())
    plateau = PlateauHalver(optimizer, cfg.lr_plateau_patience, cfg.lr_plateau_factor)

    xs = _images_to_tensor([s.image for s in dataset])
    ys = torch.tensor([s.label for s in dataset], dtype=torch.float32)
    train_idx, val_idx = split_train_val(range(len(dataset)), cfg.val_fraction, cfg.seed)
    x_val, y_val = xs[val_idx], ys[val_idx]

    ckpt_dir, _ = _out_dirs(cfg)
    report = TrainReport(pipeline="discriminator", extras={"lr": []})
    bundle = ModelBundle(arch=arch, artifact_discriminator=disc,
                         training_meta={"pipeline": "discriminator"})
    best_state = None
    rng = np.random.default_rng(cfg.seed)
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        disc.train()
        train_losses = []
        for batch in _epoch_batches(len(train_idx), cfg.batch_size, rng):
            idx = [train_idx[i] for i in batch]
            optimizer.zero_grad()
            scores = disc(xs[idx])
            loss = L.disc_loss(scores, ys[idx])
            loss.backward()
            optimizer.step()
            train_losses.append(loss.item())
        disc.eval()
        with torch.no_grad():
            val_loss = L.disc_loss(disc(x_val), y_val).item()
        report.train_losses.append(float(np.mean(train_losses)))
        report.val_losses.append(val_loss)
        report.extras["lr"].append(plateau.lr)
        if val_loss < min(report.val_losses[:-1], default=math.inf):
            report.best_epoch = epoch
            best_state = {k: v.clone() for k, v in disc.state_dict().items()}
            if ckpt_dir is not None:
                path = ckpt_dir / "discriminator_best.ckpt"
                bundle.training_meta.update(best_epoch=epoch, val_loss=val_loss)
                save_bundle(bundle, path)
                report.checkpoint_paths["best"] = path
        plateau.step(val_loss, epoch)
    if best_state is not None:
        disc.load_state_dict(best_state)
    disc.eval()
    report.wall_clock_s = time.perf_counter() - start
    report.extras["plateau_events"] = plateau.events
    _write_report_files(cfg, report, columns=["lr"])
    return report, bundle


# ---------------------------------------------------------------------------
# Refiner
# ---------------------------------------------------------------------------

def _augment_triple(i_crg, m, i_org, shift: float, flip: bool,
                    rng: np.random.Generator):
    """One transform draw applied identically to all three arrays."""
    size = i_crg.shape[0]
    if shift > 0:
        pad = int(round(shift * size))
        if pad:
            dy = int(rng.integers(-pad, pad + 1))
            dx = int(rng.integers(-pad, pad + 1))
            def shift_arr(a):
                widths = ((pad, pad), (pad, pad)) + (((0, 0),) if a.ndim == 3 else ())
                padded = np.pad(a, widths, mode="reflect")
                return padded[pad + dy:pad + dy + size, pad + dx:pad + dx + size]
            i_crg, m, i_org = shift_arr(i_crg), shift_arr(m), shift_arr(i_org)
    if flip:
        if rng.random() < 0.5:
            i_crg, m, i_org = i_crg[:, ::-1], m[:, ::-1], i_org[:, ::-1]
        if rng.random() < 0.5:
            i_crg, m, i_org = i_crg[::-1], m[::-1], i_org[::-1]
    return np.ascontiguousarray(i_crg), np.ascontiguousarray(m), np.ascontiguousarray(i_org)


def train_refiner(cfg: TrainConfig, triples, arch: ArchConfig = None,
                  fx=None) -> tuple:
    """Train the Unet on (coarse, mask, original) triples under the joint loss.

    Returns (report, bundle) with a refiner-only bundle. Inputs must match the
    refiner resolution (divisible by its depth stride).
    """
    if not triples:
        raise ConfigError("refiner training needs a non-empty dataset")
    size = triples[0][0].shape[0]
    arch = arch or ArchConfig(refiner_resolution=size)
    if size != arch.refiner_resolution:
        raise ConfigError(f"triples are {size}px but the refiner expects "
                          f"{arch.refiner_resolution}px")
    torch.manual_seed(cfg.seed)
    refiner = RefinerUnet(arch)
    fx = fx or L.vgg16_style_extractor(seed=0)
    optimizer = _make_optimizer(cfg, refiner.parameters())
    plateau = PlateauHalver(optimizer, cfg.lr_plateau_patience, cfg.lr_plateau_factor)

    train_idx, val_idx = split_train_val(range(len(triples)), cfg.val_fraction, cfg.seed)
    ckpt_dir, _ = _out_dirs(cfg)
    report = TrainReport(pipeline="refiner", extras={"lr": []})
    bundle = ModelBundle(arch=arch, refiner=refiner,
                         training_meta={"pipeline": "refiner"})
    best_state = None
    rng = np.random.default_rng(cfg.seed)
    start = time.perf_counter()

    def batch_loss(indices, augment):
        crgs, masks, orgs = [], [], []
        for i in indices:
            i_crg, m, i_org = triples[i]
            if augment:
                i_crg, m, i_org = _augment_triple(i_crg, m, i_org,
                                                  cfg.augment_shift,
                                                  cfg.augment_flip, rng)
            crgs.append(i_crg)
            masks.append(m)
            orgs.append(i_org)
        x = _images_to_tensor(crgs)
        m = torch.from_numpy(np.stack(masks))[:, None]
        y = _images_to_tensor(orgs)
        return x, m, y

    for epoch in range(cfg.epochs):
        refiner.train()
        train_losses = []
        for batch in _epoch_batches(len(train_idx), cfg.batch_size, rng):
            idx = [train_idx[i] for i in batch]
            x, m, y = batch_loss(idx, augment=True)
            optimizer.zero_grad()
            out = refiner(x)
            loss = L.joint_loss(out, x, y, m, fx)
            loss.backward()
            optimizer.step()
            train_losses.append(loss.item())
        refiner.eval()
        with torch.no_grad():
            val_losses = []
            for startv in range(0, len(val_idx), cfg.batch_size):
                idx = val_idx[startv:startv + cfg.batch_size]
                x, m, y = batch_loss(idx, augment=False)
                val_losses.append(L.joint_loss(refiner(x), x, y, m, fx).item())
            val_loss = float(np.mean(val_losses))
        report.train_losses.append(float(np.mean(train_losses)))
        report.val_losses.append(val_loss)
        report.extras["lr"].append(plateau.lr)
        if val_loss < min(report.val_losses[:-1], default=math.inf):
            report.best_epoch = epoch
            best_state = {k: v.clone() for k, v in refiner.state_dict().items()}
            if ckpt_dir is not None:
                path = ckpt_dir / "refiner_best.ckpt"
                bundle.training_meta.update(best_epoch=epoch, val_loss=val_loss)
                save_bundle(bundle, path)
                report.checkpoint_paths["best"] = path
        plateau.step(val_loss, epoch)
    if best_state is not None:
        refiner.load_state_dict(best_state)
    refiner.eval()
    report.wall_clock_s = time.perf_counter() - start
    report.extras["plateau_events"] = plateau.events
    _write_report_files(cfg, report, columns=["lr"])
    return report, bundle


# ---------------------------------------------------------------------------
# Generator + encoder (two-phase)
# ---------------------------------------------------------------------------

def train_crg(cfg: TrainConfig, images, keys=None, arch: ArchConfig = None,
              min_images: int = 500) -> tuple:
    """Phase 1 trains the generator against a transient critic; phase 2
    freezes the generator and trains the encoder to invert it (latent MSE +
    image L1, equal weights). Returns (report, bundle) with generator+encoder.

    images: array/list of canonical images, or a directory of image files.
    """
    if isinstance(images, (str, Path)):
        from .imaging import load_image
        root = Path(images)
        paths = sorted(p for p in root.rglob("*") if p.suffix.lower()
                       in (".png", ".jpg", ".jpeg"))
        keys = [str(p.relative_to(root)) for p in paths]
        resolution = (arch or ArchConfig()).resolution
        images = [load_image(p, resolution) for p in paths]
    if len(images) < min_images:
        raise ConfigError(f"crg training needs >= {min_images} images, "
                          f"got {len(images)}")
    arch = arch or ArchConfig(resolution=images[0].shape[0])
    if keys is None:
        keys = list(range(len(images)))

    torch.manual_seed(cfg.seed)
    generator = Generator(arch)
    encoder = Encoder(arch)
    critic = GanCritic(arch)

    xs = _images_to_tensor(images)
    train_idx, val_idx = split_train_val(keys, cfg.val_fraction, cfg.seed)
    x_val = xs[val_idx]

    g_opt = _make_optimizer(cfg, generator.parameters())
    c_opt = _make_optimizer(cfg, critic.parameters())
    e_opt = _make_optimizer(cfg, encoder.parameters())

    report = TrainReport(pipeline="crg",
                         extras={"gan_gen": [], "gan_disc": [],
                                 "latent_recon": [], "image_recon": []})
    rng = np.random.default_rng(cfg.seed)
    bce = torch.nn.functional.binary_cross_entropy_with_logits
    start = time.perf_counter()

    # Phase 1: adversarial training of the generator.
    for epoch in range(cfg.gan_epochs):
        generator.train()
        critic.train()
        gen_losses, disc_losses = [], []
        for batch in _epoch_batches(len(train_idx), cfg.batch_size, rng):
            idx = [train_idx[i] for i in batch]
            real = xs[idx]
            z = torch.randn(len(idx), arch.latent_dim)
            fake = generator(z)

            c_opt.zero_grad()
            d_loss = bce(critic(real), torch.ones(len(idx))) + \
                bce(critic(fake.detach()), torch.zeros(len(idx)))
            d_loss.backward()
            c_opt.step()

            g_opt.zero_grad()
            g_loss = bce(critic(fake), torch.ones(len(idx)))
            g_loss.backward()
            g_opt.step()
            gen_losses.append(g_loss.item())
            disc_losses.append(d_loss.item())
        report.extras["gan_gen"].append(float(np.mean(gen_losses)))
        report.extras["gan_disc"].append(float(np.mean(disc_losses)))

    # Phase 2: freeze the generator, train the encoder to invert it.
    generator.eval()
    for p in generator.parameters():
        p.requires_grad_(False)

    ckpt_dir, _ = _out_dirs(cfg)
    bundle = ModelBundle(arch=arch, generator=generator, encoder=encoder,
                         training_meta={"pipeline": "crg"})
    best_state = None
    for epoch in range(cfg.epochs):
        encoder.train()
        totals, latents, imgs = [], [], []
        for batch in _epoch_batches(len(train_idx), cfg.batch_size, rng):
            idx = [train_idx[i] for i in batch]
            real = xs[idx]
            z = torch.randn(len(idx), arch.latent_dim)
            e_opt.zero_grad()
            latent_recon = ((encoder(generator(z)) - z) ** 2).mean()
            image_recon = (generator(encoder(real)) - real).abs().mean()
            loss = latent_recon + image_recon
            loss.backward()
            e_opt.step()
            totals.append(loss.item())
            latents.append(latent_recon.item())
            imgs.append(image_recon.item())
        encoder.eval()
        with torch.no_grad():
            val_loss = (generator(encoder(x_val)) - x_val).abs().mean().item()
        report.train_losses.append(float(np.mean(totals)))
        report.val_losses.append(val_loss)
        report.extras["latent_recon"].append(float(np.mean(latents)))
        report.extras["image_recon"].append(float(np.mean(imgs)))
        if val_loss < min(report.val_losses[:-1], default=math.inf):
            report.best_epoch = epoch
            best_state = {k: v.clone() for k, v in encoder.state_dict().items()}
            if ckpt_dir is not None:
                path = ckpt_dir / "crg_best.ckpt"
                bundle.training_meta.update(best_epoch=epoch, val_loss=val_loss)
                save_bundle(bundle, path)
                report.checkpoint_paths["best"] = path
    if best_state is not None:
        encoder.load_state_dict(best_state)
    encoder.eval()
    report.wall_clock_s = time.perf_counter() - start
    _write_report_files(cfg, report, columns=["latent_recon", "image_recon"])
    return report, bundle


# ---------------------------------------------------------------------------
# Refiner training data from the coarse stage
# ---------------------------------------------------------------------------

def build_refiner_dataset(bundle, images, n_samples: int, seed: int = 0,
                          cycles: int = 5, size: int = None) -> list:
    """(coarse, mask, original) triples produced by the inpaint engine over a
    corpus with random masks and fill policies; deterministic per seed."""
    from . import imaging
    from .engine import InpaintRequest, inpaint

    size = size or bundle.arch.resolution
    triples = []
    for i in range(n_samples):
        rng = np.random.default_rng([seed, i])
        img = images[int(rng.integers(0, len(images)))]
        kind = ["rectangular", "irregular_brush"][int(rng.integers(0, 2))]
        mask = imaging.gen_mask(img.shape[0], kind, rng_seed=seed + i,
                                coverage=(0.1, 0.35))
        fill = [imaging.FillPolicy.mean(),
                imaging.FillPolicy.noise(rng_seed=seed + i),
                imaging.FillPolicy.constant((1.0, 1.0, 1.0)),
                imaging.FillPolicy.constant((-1.0, -1.0, -1.0))][int(rng.integers(0, 4))]
        req = InpaintRequest(image=img, mask=mask, fill=fill, cycles=cycles,
                             refine=False, seed=seed + i)
        result = inpaint(bundle, req)
        coarse, mask_out, org = result.coarse, req.mask, img
        if size != coarse.shape[0]:
            coarse = imaging.resize_image(coarse, size)
            mask_out = imaging.resize_mask(mask_out, size)
            org = imaging.resize_image(org, size)
        triples.append((coarse, mask_out, org))
    return triples
