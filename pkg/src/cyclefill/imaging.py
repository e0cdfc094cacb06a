"""Image and mask containers, file I/O, fill policies, mask synthesis, compositing.

Canonical pixel convention: images are float32 arrays of shape (H, W, 3) with
every value in [-1, 1]; masks are float32 arrays of shape (H, W) whose values
are exactly 0 (hole, to be filled) or 1 (known). Conversions to 8-bit happen
only at the file boundary.
"""

import io
from dataclasses import dataclass

import numpy as np
from PIL import Image as PILImage
from PIL import ImageDraw, UnidentifiedImageError

from .errors import DegenerateInputError, FormatError, MaskGenerationError, ShapeError

FILL_KINDS = ("mean", "zero_mean_noise", "constant", "sketch")
MASK_KINDS = ("rectangular", "irregular_brush")

# Mask file contract: 8-bit grayscale, >= this value means "known".
MASK_THRESHOLD = 128


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def validate_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    if not isinstance(img, np.ndarray) or img.ndim != 3 or img.shape[2] != 3:
        raise ShapeError(f"{name} must be an (H, W, 3) array, got "
                         f"{getattr(img, 'shape', type(img))}")
    if not np.isfinite(img).all():
        raise ShapeError(f"{name} contains non-finite values")
    if img.min() < -1.0 or img.max() > 1.0:
        raise ShapeError(f"{name} has values outside [-1, 1]")
    return img


def validate_mask(mask: np.ndarray, name: str = "mask") -> np.ndarray:
    if not isinstance(mask, np.ndarray) or mask.ndim != 2:
        raise ShapeError(f"{name} must be an (H, W) array, got "
                         f"{getattr(mask, 'shape', type(mask))}")
    bad = (mask != 0) & (mask != 1)
    if bad.any():
        raise ShapeError(f"{name} must be binary (values exactly 0 or 1)")
    return mask


def validate_pair(img: np.ndarray, mask: np.ndarray) -> None:
    if img.shape[:2] != mask.shape:
        raise ShapeError(f"image {img.shape[:2]} and mask {mask.shape} "
                         f"sizes do not match")


# ---------------------------------------------------------------------------
# File I/O
# ---------------------------------------------------------------------------

def load_image(path, target_size: int) -> np.ndarray:
    """Load an 8-bit RGB PNG/JPEG, bilinear-resize to square, map to [-1, 1].

    8-bit value v maps to 2*(v/255) - 1. target_size=None keeps the native
    size (which must then be square).
    """
    try:
        with PILImage.open(path) as im:
            im.load()
            pil = im
            if pil.mode != "RGB":
                raise FormatError(f"{path}: expected 8-bit RGB, got mode {pil.mode}")
            if target_size is None:
                if pil.size[0] != pil.size[1]:
                    raise FormatError(f"{path}: image must be square, got {pil.size}")
            elif pil.size != (target_size, target_size):
                pil = pil.resize((target_size, target_size), PILImage.BILINEAR)
            arr = np.asarray(pil, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a decodable image") from exc
    return bytes_to_unit_range(arr)


def image_from_bytes(data: bytes, target_size: int = None) -> np.ndarray:
    """Decode in-memory PNG/JPEG bytes via the load_image contract."""
    return load_image(io.BytesIO(data), target_size)


def save_image(img: np.ndarray, path) -> None:
    """Write a canonical image as 8-bit RGB PNG (inverse affine map, rounded)."""
    validate_image(img)
    PILImage.fromarray(unit_range_to_bytes(img), mode="RGB").save(path, format="PNG")


def image_to_png_bytes(img: np.ndarray) -> bytes:
    buf = io.BytesIO()
    save_image(img, buf)
    return buf.getvalue()


def bytes_to_unit_range(arr: np.ndarray) -> np.ndarray:
    """uint8 -> float32 in [-1, 1]: v -> 2*(v/255) - 1."""
    return (arr.astype(np.float32) / np.float32(255.0)) * np.float32(2.0) - np.float32(1.0)


def unit_range_to_bytes(img: np.ndarray) -> np.ndarray:
    """float [-1, 1] -> uint8: round to nearest of 255*(v+1)/2."""
    scaled = np.rint((img.astype(np.float64) + 1.0) * 0.5 * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def decode_mask(bitmap: np.ndarray, expected_size: int) -> np.ndarray:
    """8-bit grayscale bitmap -> binary mask; pixel >= 128 is known (1)."""
    bitmap = np.asarray(bitmap)
    if bitmap.ndim != 2:
        raise ShapeError(f"mask bitmap must be 2-D grayscale, got shape {bitmap.shape}")
    if bitmap.shape != (expected_size, expected_size):
        raise ShapeError(f"mask bitmap is {bitmap.shape}, expected "
                         f"({expected_size}, {expected_size})")
    return (bitmap >= MASK_THRESHOLD).astype(np.float32)


def load_mask(path, expected_size: int) -> np.ndarray:
    """Load an 8-bit grayscale mask file and threshold per decode_mask."""
    try:
        with PILImage.open(path) as im:
            im.load()
            pil = im
            if pil.mode != "L":
                pil = pil.convert("L")
            arr = np.asarray(pil, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise FormatError(f"{path}: not a decodable image") from exc
    return decode_mask(arr, expected_size)


def mask_from_bytes(data: bytes, expected_size: int) -> np.ndarray:
    return load_mask(io.BytesIO(data), expected_size)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a mask as a 0/255 grayscale PNG (round-trips exactly)."""
    validate_mask(mask)
    arr = (mask > 0).astype(np.uint8) * 255
    PILImage.fromarray(arr, mode="L").save(path, format="PNG")


def mask_to_png_bytes(mask: np.ndarray) -> bytes:
    buf = io.BytesIO()
    save_mask(mask, buf)
    return buf.getvalue()


# ---------------------------------------------------------------------------
# Compositing (elementwise, bit-exact)
# ---------------------------------------------------------------------------

def compose_cycle_input(i_org: np.ndarray, m: np.ndarray, i_prev: np.ndarray) -> np.ndarray:
    """m*i_org + (1-m)*i_prev: known region from the original, hole from i_prev.

    Implemented by selection, so the known region is bit-identical to i_org and
    the hole bit-identical to i_prev.
    """
    validate_image(i_org, "i_org")
    validate_image(i_prev, "i_prev")
    validate_mask(m)
    validate_pair(i_org, m)
    if i_org.shape != i_prev.shape:
        raise ShapeError(f"i_org {i_org.shape} and i_prev {i_prev.shape} differ")
    return np.where(m[:, :, None] > 0, i_org, i_prev)


def compose_refined(i_crg: np.ndarray, m: np.ndarray, i_unet: np.ndarray) -> np.ndarray:
    """m*i_crg + (1-m)*i_unet: known region from the coarse result, hole from the refiner."""
    return compose_cycle_input(i_crg, m, i_unet)


# ---------------------------------------------------------------------------
# Fill policies
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Sketch:
    """Colored strokes with coverage alpha, drawn inside a mask's hole.

    color: (H, W, 3) in [-1, 1]; alpha: (H, W) in [0, 1], zero outside the hole.
    """
    color: np.ndarray
    alpha: np.ndarray

    def __post_init__(self):
        validate_image(self.color, "sketch color")
        if self.alpha.ndim != 2 or self.alpha.shape != self.color.shape[:2]:
            raise ShapeError(f"sketch alpha {self.alpha.shape} does not match "
                             f"color {self.color.shape[:2]}")
        if self.alpha.min() < 0.0 or self.alpha.max() > 1.0:
            raise ShapeError("sketch alpha must lie in [0, 1]")


@dataclass(frozen=True)
class FillPolicy:
    """Rule assigning initial pixel values inside the hole.

    Exactly the fields required by `kind` may be set:
      mean            -> none (per-channel mean of the known region)
      zero_mean_noise -> noise_sigma (Gaussian, clipped to [-1, 1])
      constant        -> constant_color
      sketch          -> sketch (strokes over a mid-gray base)
    """
    kind: str
    constant_color: tuple = None
    noise_sigma: float = None
    sketch: Sketch = None
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in FILL_KINDS:
            raise ValueError(f"unknown fill kind {self.kind!r}; expected one of {FILL_KINDS}")
        required = {
            "mean": (),
            "zero_mean_noise": ("noise_sigma",),
            "constant": ("constant_color",),
            "sketch": ("sketch",),
        }[self.kind]
        for name in ("constant_color", "noise_sigma", "sketch"):
            value = getattr(self, name)
            if name in required and value is None:
                raise ValueError(f"fill kind {self.kind!r} requires {name}")
            if name not in required and value is not None:
                raise ValueError(f"fill kind {self.kind!r} does not take {name}")
        if self.kind == "constant":
            color = tuple(float(c) for c in self.constant_color)
            if len(color) != 3 or any(c < -1.0 or c > 1.0 for c in color):
                raise ValueError("constant_color must be three values in [-1, 1]")
            object.__setattr__(self, "constant_color", color)
        if self.kind == "zero_mean_noise" and not self.noise_sigma > 0:
            raise ValueError("noise_sigma must be positive")

    @classmethod
    def mean(cls) -> "FillPolicy":
        return cls(kind="mean")

    @classmethod
    def noise(cls, sigma: float = 0.25, rng_seed: int = 0) -> "FillPolicy":
        return cls(kind="zero_mean_noise", noise_sigma=sigma, rng_seed=rng_seed)

    @classmethod
    def constant(cls, color) -> "FillPolicy":
        return cls(kind="constant", constant_color=tuple(color))

    @classmethod
    def from_sketch(cls, sketch: Sketch) -> "FillPolicy":
        return cls(kind="sketch", sketch=sketch)


FILL_ALIASES = {
    "noise": ("zero_mean_noise", {}),
    "white": ("constant", {"constant_color": (1.0, 1.0, 1.0)}),
    "black": ("constant", {"constant_color": (-1.0, -1.0, -1.0)}),
}


def fill_policy_from_spec(kind: str, *, constant_color=None, noise_sigma=None,
                          sketch: Sketch = None, rng_seed: int = 0) -> FillPolicy:
    """Build a FillPolicy from user-facing parameters.

    Accepts the aliases noise (zero-mean Gaussian), white, and black
    (constant fills matching the usual demo presets).
    """
    kind, presets = FILL_ALIASES.get(kind, (kind, {}))
    constant_color = presets.get("constant_color", constant_color)
    if kind == "mean":
        return FillPolicy(kind="mean", rng_seed=rng_seed)
    if kind == "zero_mean_noise":
        sigma = 0.25 if noise_sigma is None else float(noise_sigma)
        return FillPolicy(kind="zero_mean_noise", noise_sigma=sigma, rng_seed=rng_seed)
    if kind == "constant":
        if constant_color is None:
            raise ValueError("constant fill requires constant_color")
        return FillPolicy(kind="constant", constant_color=tuple(constant_color),
                          rng_seed=rng_seed)
    if kind == "sketch":
        if sketch is None:
            raise ValueError("sketch fill requires a sketch")
        return FillPolicy(kind="sketch", sketch=sketch, rng_seed=rng_seed)
    raise ValueError(f"unknown fill kind {kind!r}")


def apply_fill(i_org: np.ndarray, m: np.ndarray, policy: FillPolicy) -> np.ndarray:
    """Fill the hole per the policy; the known region is left bit-identical."""
    validate_image(i_org, "i_org")
    validate_mask(m)
    validate_pair(i_org, m)

    if policy.kind == "mean":
        known = m > 0
        if not known.any():
            raise DegenerateInputError("mean fill needs a non-empty known region")
        color = i_org[known].mean(axis=0).astype(np.float32)
        filler = np.broadcast_to(color, i_org.shape)
    elif policy.kind == "zero_mean_noise":
        rng = np.random.default_rng(policy.rng_seed)
        filler = rng.normal(0.0, policy.noise_sigma, size=i_org.shape)
        filler = np.clip(filler, -1.0, 1.0).astype(np.float32)
    elif policy.kind == "constant":
        color = np.asarray(policy.constant_color, dtype=np.float32)
        filler = np.broadcast_to(color, i_org.shape)
    else:  # sketch
        sk = policy.sketch
        if sk.color.shape != i_org.shape:
            raise ShapeError(f"sketch {sk.color.shape[:2]} does not match image "
                             f"{i_org.shape[:2]}")
        if ((sk.alpha > 0) & (m > 0)).any():
            raise ValueError("sketch strokes must lie inside the mask's hole")
        # Mid-gray base (0) overwritten by alpha-blended stroke color.
        alpha = sk.alpha[:, :, None].astype(np.float32)
        filler = alpha * sk.color

    return np.where(m[:, :, None] > 0, i_org, filler)


# ---------------------------------------------------------------------------
# Mask synthesis
# ---------------------------------------------------------------------------

def gen_mask(size: int, kind: str, rng_seed: int = 0, *, rect=None,
             coverage=(0.10, 0.25), stroke_radius=None, max_tries: int = 200) -> np.ndarray:
    """Generate a square binary mask (0 = hole) of the requested kind.

    rectangular: a zero rectangle, explicit via rect=(r0, c0, h, w) or random
    with hole fraction in `coverage`. irregular_brush: union of random-walk
    brush strokes, regenerated until the hole fraction lands in `coverage`.
    Deterministic for a fixed seed.
    """
    if kind not in MASK_KINDS:
        raise ValueError(f"unknown mask kind {kind!r}; expected one of {MASK_KINDS}")
    if rect is not None:
        if kind != "rectangular":
            raise ValueError("rect is only valid for rectangular masks")
        return _rect_mask(size, rect)

    lo, hi = float(coverage[0]), float(coverage[1])
    if not (0.0 < lo <= hi <= 0.9):
        raise ValueError(f"coverage {coverage} must satisfy 0 < lo <= hi <= 0.9")

    if kind == "rectangular":
        return _random_rect_mask(size, lo, hi, rng_seed, max_tries)
    return _brush_mask(size, lo, hi, rng_seed, stroke_radius, max_tries)


def _rect_mask(size: int, rect) -> np.ndarray:
    r0, c0, h, w = (int(v) for v in rect)
    if h <= 0 or w <= 0 or r0 < 0 or c0 < 0 or r0 + h > size or c0 + w > size:
        raise ShapeError(f"rect {rect} does not fit a {size}x{size} mask")
    mask = np.ones((size, size), dtype=np.float32)
    mask[r0:r0 + h, c0:c0 + w] = 0.0
    return mask


def _random_rect_mask(size: int, lo: float, hi: float, rng_seed: int,
                      max_tries: int) -> np.ndarray:
    rng = np.random.default_rng(rng_seed)
    total = size * size
    for _ in range(max_tries):
        frac = rng.uniform(lo, hi)
        aspect = rng.uniform(0.5, 2.0)
        h = int(np.clip(round(np.sqrt(frac * total * aspect)), 1, size))
        w = int(np.clip(round(frac * total / h), 1, size))
        if not lo <= (h * w) / total <= hi:
            continue
        r0 = int(rng.integers(0, size - h + 1))
        c0 = int(rng.integers(0, size - w + 1))
        return _rect_mask(size, (r0, c0, h, w))
    raise MaskGenerationError(f"no rectangle with coverage in [{lo}, {hi}] "
                              f"after {max_tries} tries")


def _brush_mask(size: int, lo: float, hi: float, rng_seed: int,
                stroke_radius, max_tries: int) -> np.ndarray:
    if stroke_radius is None:
        # Default 5-15 px at 64-px resolution, scaled linearly.
        stroke_radius = (max(2, round(5 * size / 64)), max(3, round(15 * size / 64)))
    r_lo, r_hi = int(stroke_radius[0]), int(stroke_radius[1])
    total = size * size

    for attempt in range(max_tries):
        rng = np.random.default_rng([rng_seed, attempt])
        canvas = PILImage.new("L", (size, size), 255)
        draw = ImageDraw.Draw(canvas)
        hole = 0
        for _ in range(64):  # strokes per attempt; coverage check exits earlier
            radius = int(rng.integers(r_lo, r_hi + 1))
            x = float(rng.uniform(0, size))
            y = float(rng.uniform(0, size))
            heading = float(rng.uniform(0, 2 * np.pi))
            segments = int(rng.integers(4, 13))
            for _ in range(segments):
                heading += float(rng.uniform(-0.8, 0.8))  # bounded turn angle
                length = float(rng.uniform(0.5, 1.2)) * radius
                nx = float(np.clip(x + length * np.cos(heading), 0, size - 1))
                ny = float(np.clip(y + length * np.sin(heading), 0, size - 1))
                draw.line([(x, y), (nx, ny)], fill=0, width=2 * radius)
                for px, py in ((x, y), (nx, ny)):
                    draw.ellipse([px - radius, py - radius, px + radius, py + radius],
                                 fill=0)
                x, y = nx, ny
                hole = int((np.asarray(canvas) < MASK_THRESHOLD).sum())
                if hole >= lo * total:
                    break
            if hole >= lo * total:
                break
        if lo * total <= hole <= hi * total:
            return (np.asarray(canvas) >= MASK_THRESHOLD).astype(np.float32)
    raise MaskGenerationError(f"no brush mask with coverage in [{lo}, {hi}] "
                              f"after {max_tries} tries")


# ---------------------------------------------------------------------------
# Resizing (model-boundary helper)
# ---------------------------------------------------------------------------

def resize_image(img: np.ndarray, size: int) -> np.ndarray:
    """Bilinear resize of a canonical image to size x size."""
    validate_image(img)
    if img.shape[0] == size and img.shape[1] == size:
        return img
    import torch
    t = torch.from_numpy(np.ascontiguousarray(img.transpose(2, 0, 1)))[None]
    out = torch.nn.functional.interpolate(t, size=(size, size), mode="bilinear",
                                          align_corners=False)
    return np.clip(out[0].numpy().transpose(1, 2, 0), -1.0, 1.0)


def resize_mask(mask: np.ndarray, size: int) -> np.ndarray:
    """Nearest-neighbor resize so the mask stays exactly binary."""
    validate_mask(mask)
    if mask.shape == (size, size):
        return mask
    src = mask.shape[0]
    idx = (np.arange(size) * (src / size)).astype(np.int64).clip(0, src - 1)
    return mask[np.ix_(idx, idx)].astype(np.float32)
