"""Network architectures, forward-pass contracts, and checkpoint serialization.

Four networks make up a bundle: a convolutional generator (latent -> image,
tanh head), a mirrored convolutional encoder (image -> latent), an artifact
discriminator (image -> quality score in [0, 1]), and a Unet refiner
(image -> image). A transient GAN critic exists only for generator training
and is never part of a bundle.
"""

import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import CheckpointError, ShapeError

CHECKPOINT_FORMAT_VERSION = 1
BUNDLE_NETWORKS = ("generator", "encoder", "artifact_discriminator", "refiner")

REFINER_DEPTH_STRIDE = 128  # 6 stride-2 convs + 1 bottleneck pool = 2^7


@dataclass(frozen=True)
class ArchConfig:
    """Shapes shared by all four networks in a bundle."""
    resolution: int = 64
    latent_dim: int = 128
    base_channels: int = 64
    max_channels: int = 512
    refiner_resolution: int = 128
    refiner_channels: tuple = (64, 128, 256, 512, 512, 512)
    refiner_kernels: tuple = (7, 5, 5, 3, 3, 3)
    disc_blocks: int = 3
    disc_base_filters: int = 64

    def __post_init__(self):
        if self.resolution < 32 or self.resolution & (self.resolution - 1):
            raise ValueError(f"resolution must be a power of 2 >= 32, got {self.resolution}")
        if self.refiner_resolution % REFINER_DEPTH_STRIDE:
            raise ValueError(f"refiner resolution must be divisible by "
                             f"{REFINER_DEPTH_STRIDE}, got {self.refiner_resolution}")
        if len(self.refiner_channels) != len(self.refiner_kernels):
            raise ValueError("refiner channel/kernel lists differ in length")
        object.__setattr__(self, "refiner_channels", tuple(self.refiner_channels))
        object.__setattr__(self, "refiner_kernels", tuple(self.refiner_kernels))


def _feature_ladder(arch: ArchConfig) -> list:
    """Channel widths from 4x4 up to full resolution (descending)."""
    n_ups = int(np.log2(arch.resolution // 4))
    ladder = [min(arch.max_channels, arch.base_channels << i) for i in range(n_ups + 1)]
    return ladder[::-1]


class Generator(nn.Module):
    """Latent vector -> image: 4x4 stem, nearest-upsample conv blocks, tanh head."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.resolution = arch.resolution
        self.latent_dim = arch.latent_dim
        ladder = _feature_ladder(arch)
        self.stem_channels = ladder[0]
        self.stem = nn.Linear(arch.latent_dim, ladder[0] * 4 * 4)
        blocks = []
        for c_in, c_out in zip(ladder[:-1], ladder[1:]):
            blocks += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c_in, c_out, 3, padding=1),
                nn.BatchNorm2d(c_out),
                nn.LeakyReLU(0.2, inplace=True),
            ]
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Conv2d(ladder[-1], 3, 3, padding=1)

    def forward(self, z):
        x = self.stem(z).view(-1, self.stem_channels, 4, 4)
        x = nn.functional.leaky_relu(x, 0.2)
        x = self.blocks(x)
        return torch.tanh(self.head(x))


class Encoder(nn.Module):
    """Image -> latent vector, mirroring the generator's ladder."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.resolution = arch.resolution
        self.latent_dim = arch.latent_dim
        # Mirror of the generator: same channel widths at same spatial sizes,
        # ending at 4x4 before the latent projection.
        ladder = _feature_ladder(arch)[::-1][1:]
        blocks = []
        c_in = 3
        for c_out in ladder:
            blocks += [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
                nn.BatchNorm2d(c_out),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            c_in = c_out
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(ladder[-1] * 4 * 4, arch.latent_dim)

    def forward(self, x):
        h = self.blocks(x)
        return self.head(h.flatten(1))


class ArtifactDiscriminator(nn.Module):
    """Image quality scorer: 3 stride-2 conv blocks (filter count doubling per
    block), 50% spatial dropout before global average pooling, sigmoid head.

    Dropout is applied once, after the last block: dropping half the channels
    at every depth starves the gradient so badly that desk-scale training
    cannot separate even cleanly separable data.
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.resolution = arch.resolution
        blocks = []
        c_in = 3
        c_out = arch.disc_base_filters
        for _ in range(arch.disc_blocks):
            blocks += [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
                nn.BatchNorm2d(c_out),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            c_in, c_out = c_out, c_out * 2
        blocks.append(nn.Dropout2d(0.5))
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(c_in, 1)

    def forward(self, x):
        h = self.blocks(x)
        h = h.mean(dim=(2, 3))  # global average pooling
        return torch.sigmoid(self.head(h)).squeeze(1)


class GanCritic(nn.Module):
    """Real/fake critic used only while training the generator (logit output)."""

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.resolution = arch.resolution
        blocks = [nn.Conv2d(3, arch.base_channels, 3, stride=2, padding=1),
                  nn.LeakyReLU(0.2, inplace=True)]
        c_in = arch.base_channels
        size = arch.resolution // 2
        while size > 4:
            c_out = min(arch.max_channels, c_in * 2)
            blocks += [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
                nn.BatchNorm2d(c_out),
                nn.LeakyReLU(0.2, inplace=True),
            ]
            c_in = c_out
            size //= 2
        self.blocks = nn.Sequential(*blocks)
        self.head = nn.Linear(c_in * size * size, 1)

    def forward(self, x):
        return self.head(self.blocks(x).flatten(1)).squeeze(1)


class RefinerUnet(nn.Module):
    """Boundary-artifact remover: 6 stride-2 encoder convs, a factor-2
    bottleneck pool, and 7 nearest-upsample decoder stages, each concatenating
    the encoder feature (or the input) of identical spatial size.

    Encoder uses ReLU, decoder LeakyReLU(0.2); batch norm after every conv
    except the final 3-channel projection, which ends in tanh.
    """

    def __init__(self, arch: ArchConfig):
        super().__init__()
        self.resolution = arch.refiner_resolution
        self.depth_stride = REFINER_DEPTH_STRIDE
        channels = arch.refiner_channels
        kernels = arch.refiner_kernels

        self.enc = nn.ModuleList()
        c_in = 3
        for c_out, k in zip(channels, kernels):
            self.enc.append(nn.Sequential(
                nn.Conv2d(c_in, c_out, k, stride=2, padding=k // 2),
                nn.BatchNorm2d(c_out),
                nn.ReLU(inplace=True),
            ))
            c_in = c_out
        self.bottleneck = nn.AvgPool2d(2)

        # Decoder: skip sources are enc6..enc1 then the network input; each
        # stage's conv narrows to its skip's width (512,512,512,256,128,64,3).
        skip_channels = list(channels[::-1]) + [3]
        dec_out = skip_channels
        self.dec = nn.ModuleList()
        c_in = channels[-1]
        for skip_c, c_out in zip(skip_channels, dec_out):
            final = c_out == 3
            layers = [nn.Conv2d(c_in + skip_c, c_out, 3, padding=1)]
            if not final:
                layers += [nn.BatchNorm2d(c_out), nn.LeakyReLU(0.2, inplace=True)]
            self.dec.append(nn.Sequential(*layers))
            c_in = c_out
        self.up = nn.Upsample(scale_factor=2, mode="nearest")

    def forward(self, x):
        out, _ = self._run(x)
        return out

    def forward_trace(self, x):
        """Forward pass returning (output, stage trace) for contract checks."""
        return self._run(x)

    def _run(self, x):
        if x.shape[2] % self.depth_stride or x.shape[3] % self.depth_stride:
            raise ShapeError(f"refiner input {tuple(x.shape[2:])} must be divisible "
                             f"by {self.depth_stride}")
        trace = []
        enc_feats = []
        h = x
        for i, block in enumerate(self.enc):
            h = block(h)
            enc_feats.append(h)
            trace.append((f"conv{i + 1}", h.shape[1], h.shape[2]))
        h = self.bottleneck(h)
        trace.append(("bottleneck", h.shape[1], h.shape[2]))

        skips = enc_feats[::-1] + [x]  # enc6..enc1, then the network input
        for i, (block, skip) in enumerate(zip(self.dec, skips)):
            h = self.up(h)
            if h.shape[2:] != skip.shape[2:]:
                raise ShapeError(f"decoder stage {i + 1}: upsampled {tuple(h.shape[2:])} "
                                 f"vs skip {tuple(skip.shape[2:])}")
            cat = torch.cat([h, skip], dim=1)
            trace.append((f"up{i + 1}", h.shape[1], h.shape[2]))
            trace.append((f"concat{i + 1}", cat.shape[1], cat.shape[2]))
            h = block(cat)
            trace.append((f"conv{i + 7}", h.shape[1], h.shape[2]))
        return torch.tanh(h), trace


# ---------------------------------------------------------------------------
# Bundle container and builders
# ---------------------------------------------------------------------------

@dataclass
class ModelBundle:
    """Versioned container of the four networks plus their shared config.

    Partial bundles (missing networks set to None) are produced by individual
    training pipelines; the engine validates presence of what it needs.
    """
    arch: ArchConfig
    generator: nn.Module = None
    encoder: nn.Module = None
    artifact_discriminator: nn.Module = None
    refiner: nn.Module = None
    version: str = "1"
    training_meta: dict = field(default_factory=dict)

    def networks(self) -> dict:
        nets = {name: getattr(self, name) for name in BUNDLE_NETWORKS}
        return {name: net for name, net in nets.items() if net is not None}

    def require(self, *names):
        for name in names:
            if getattr(self, name) is None:
                raise CheckpointError(f"bundle is missing the {name} network")

    def eval_mode(self) -> "ModelBundle":
        for net in self.networks().values():
            net.eval()
        return self


_BUILDERS = {
    "generator": Generator,
    "encoder": Encoder,
    "artifact_discriminator": ArtifactDiscriminator,
    "refiner": RefinerUnet,
}


def build_bundle(arch: ArchConfig = None, seed: int = 0,
                 networks=BUNDLE_NETWORKS) -> ModelBundle:
    """Randomly initialized bundle (all four networks unless trimmed)."""
    arch = arch or ArchConfig()
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        built = {name: _BUILDERS[name](arch) for name in networks}
    return ModelBundle(arch=arch, **built)


# ---------------------------------------------------------------------------
# Inference wrappers (numpy in/out, shape-validated, deterministic)
# ---------------------------------------------------------------------------

def to_tensor(img: np.ndarray) -> torch.Tensor:
    """(H, W, 3) canonical image -> (1, 3, H, W) float32 tensor."""
    return torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]

def from_tensor(t: torch.Tensor) -> np.ndarray:
    """(1, 3, H, W) or (3, H, W) tensor -> (H, W, 3) float32 array."""
    if t.dim() == 4:
        t = t[0]
    return np.ascontiguousarray(t.detach().cpu().numpy().transpose(1, 2, 0))


def _check_resolution(img: np.ndarray, net, what: str):
    res = getattr(net, "resolution", None)
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"{what} expects an (H, W, 3) image, got {img.shape}")
    if res is not None and img.shape[:2] != (res, res):
        raise ShapeError(f"{what} expects {res}x{res} input, got {img.shape[:2]}")


def generate(g, z) -> np.ndarray:
    """Run the generator on one latent vector; output lies in [-1, 1]."""
    z = np.asarray(z, dtype=np.float32)
    d = getattr(g, "latent_dim", None)
    if z.ndim != 1 or (d is not None and z.shape[0] != d):
        raise ShapeError(f"latent must be a length-{d} vector, got shape {z.shape}")
    g.eval()
    with torch.no_grad():
        out = g(torch.from_numpy(z)[None])
    return from_tensor(out)


def encode(e, img: np.ndarray) -> np.ndarray:
    """Embed an image into the generator's latent space."""
    _check_resolution(img, e, "encoder")
    e.eval()
    with torch.no_grad():
        z = e(to_tensor(img))
    return z[0].cpu().numpy()


def discriminate(d, img: np.ndarray) -> float:
    """Quality score in [0, 1] for one image."""
    _check_resolution(img, d, "discriminator")
    d.eval()
    with torch.no_grad():
        score = d(to_tensor(img))
    return float(score.reshape(()))


def refine(u, img: np.ndarray) -> np.ndarray:
    """Run the refiner; input sides must be divisible by its depth stride."""
    if img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"refiner expects an (H, W, 3) image, got {img.shape}")
    stride = getattr(u, "depth_stride", REFINER_DEPTH_STRIDE)
    if img.shape[0] % stride or img.shape[1] % stride:
        raise ShapeError(f"refiner input {img.shape[:2]} must be divisible by {stride}")
    u.eval()
    with torch.no_grad():
        out = u(to_tensor(img))
    return np.clip(from_tensor(out), -1.0, 1.0)


def count_params(net) -> int:
    """Number of trainable scalars in a module."""
    return sum(p.numel() for p in net.parameters() if p.requires_grad)


# ---------------------------------------------------------------------------
# Checkpoint serialization
# ---------------------------------------------------------------------------
# Single zip archive: header.json (format version, arch, bundle version,
# training metadata, per-network tensor manifests) plus one .bin blob per
# network, tensors concatenated in manifest order as little-endian row-major
# values ('<f4' floats; '<i8' for integer buffers).

_DTYPE_CODES = {torch.float32: "<f4", torch.int64: "<i8"}


def save_bundle(bundle: ModelBundle, path) -> None:
    header = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "kind": "cyclefill-checkpoint",
        "version": bundle.version,
        "arch": asdict(bundle.arch),
        "training_meta": bundle.training_meta,
        "networks": {},
    }
    blobs = {}
    for name, net in bundle.networks().items():
        manifest, blob = _serialize_state(net.state_dict())
        header["networks"][name] = manifest
        blobs[name] = blob
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("header.json", json.dumps(header, indent=1, sort_keys=True))
        for name, blob in blobs.items():
            zf.writestr(f"{name}.bin", blob)


def _serialize_state(state: dict):
    manifest, parts = [], []
    for key, tensor in state.items():
        code = _DTYPE_CODES.get(tensor.dtype)
        if code is None:
            raise CheckpointError(f"unsupported tensor dtype {tensor.dtype} for {key}")
        arr = tensor.detach().cpu().numpy().astype(code)
        manifest.append({"key": key, "shape": list(arr.shape), "dtype": code})
        parts.append(arr.tobytes(order="C"))
    return manifest, b"".join(parts)


def load_bundle(path) -> ModelBundle:
    """Rebuild a bundle from a checkpoint archive; bit-exact weight round-trip."""
    try:
        with zipfile.ZipFile(path) as zf:
            header = json.loads(zf.read("header.json"))
            if header.get("format_version") != CHECKPOINT_FORMAT_VERSION:
                raise CheckpointError(
                    f"unsupported checkpoint format version {header.get('format_version')}")
            arch = ArchConfig(**header["arch"])
            nets = {}
            for name, manifest in header["networks"].items():
                if name not in _BUILDERS:
                    raise CheckpointError(f"unknown network {name!r} in checkpoint")
                net = _BUILDERS[name](arch)
                _load_state(net, manifest, zf.read(f"{name}.bin"))
                net.eval()
                nets[name] = net
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, TypeError,
            ValueError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"corrupt or incompatible checkpoint {path}: {exc}") from exc
    return ModelBundle(arch=arch, version=header.get("version", "1"),
                       training_meta=header.get("training_meta", {}), **nets)


def _load_state(net: nn.Module, manifest: list, blob: bytes) -> None:
    state, offset = {}, 0
    for entry in manifest:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        nbytes = count * dtype.itemsize
        chunk = blob[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise CheckpointError(f"checkpoint blob truncated at {entry['key']}")
        arr = np.frombuffer(chunk, dtype=dtype).reshape(entry["shape"]).copy()
        state[entry["key"]] = torch.from_numpy(arr)
        offset += nbytes
    if offset != len(blob):
        raise CheckpointError("checkpoint blob has trailing bytes")
    try:
        net.load_state_dict(state, strict=True)
    except RuntimeError as exc:
        raise CheckpointError(f"checkpoint does not match declared architecture: "
                              f"{exc}") from exc
