"""Synthetic visual-artifact data for the scoring discriminator.

Blur, brightness, and contrast perturbations are computed over the whole image
in [0, 1] space and pasted into the mask's hole, so the hole boundary carries
exactly the brightness/blur/contrast discontinuities the discriminator must
learn to score. Real and mildly-distorted samples are labeled 0.9, heavily
distorted ones 0.1.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import DegenerateInputError, ShapeError
from .imaging import gen_mask, validate_image, validate_mask, validate_pair

REAL_LABEL = 0.9
FAKE_LABEL = 0.1

# Severity ranges for (blur sigma px, brightness factor, contrast factor).
HEAVY_RANGES = {"blur_sigma": (1.0, 2.5), "brightness": (0.4, 0.8), "contrast": (0.4, 0.8)}
MILD_RANGES = {"blur_sigma": (0.3, 0.8), "brightness": (0.85, 0.95), "contrast": (0.85, 0.95)}

# Dataset composition: clean / mild (both real) / heavy (fake), out of 60.
SPLIT_NUMERATORS = (22, 8, 30)
SPLIT_DENOMINATOR = 60

DATASET_MASK_COVERAGE = (0.10, 0.40)


@dataclass(frozen=True)
class DistortionParams:
    blur_sigma: float
    brightness: float
    contrast: float
    severity: str = "custom"  # custom = hand-built, no range check

    def __post_init__(self):
        if self.blur_sigma < 0 or self.brightness <= 0 or self.contrast <= 0:
            raise ValueError("blur_sigma must be >= 0, brightness/contrast > 0")
        if self.severity == "custom":
            return
        if self.severity == "none":
            ok = self.blur_sigma == 0 and self.brightness == 1 and self.contrast == 1
            if not ok:
                raise ValueError("severity 'none' requires (0, 1, 1) params")
            return
        try:
            ranges = {"heavy": HEAVY_RANGES, "mild": MILD_RANGES}[self.severity]
        except KeyError:
            raise ValueError(f"unknown severity {self.severity!r}") from None
        for name, (lo, hi) in ranges.items():
            value = getattr(self, name)
            if not lo <= value <= hi:
                raise ValueError(f"{self.severity} {name}={value} outside [{lo}, {hi}]")

    @classmethod
    def identity(cls) -> "DistortionParams":
        return cls(blur_sigma=0.0, brightness=1.0, contrast=1.0, severity="none")


@dataclass(frozen=True)
class LabeledSample:
    image: np.ndarray
    label: float

    def __post_init__(self):
        if self.label not in (REAL_LABEL, FAKE_LABEL):
            raise ValueError(f"label must be {REAL_LABEL} or {FAKE_LABEL}")


def sample_params(severity: str, rng_seed: int = 0) -> DistortionParams:
    """Draw each field independently and uniformly within its severity range."""
    ranges = {"heavy": HEAVY_RANGES, "mild": MILD_RANGES}.get(severity)
    if ranges is None:
        raise ValueError(f"severity must be 'mild' or 'heavy', got {severity!r}")
    rng = np.random.default_rng(rng_seed)
    drawn = {name: float(rng.uniform(lo, hi)) for name, (lo, hi) in ranges.items()}
    return DistortionParams(severity=severity, **drawn)


def apply_distortion(img: np.ndarray, m: np.ndarray, p: DistortionParams) -> np.ndarray:
    """Distort the whole image, then keep the distorted values only in the hole.

    Order, in [0, 1] space: Gaussian blur (kernel truncated at 3 sigma), then
    brightness v' = clamp(b*v), then contrast v' = clamp(mu + c*(v - mu)) with
    mu the per-channel mean of the undistorted image.
    """
    validate_image(img)
    validate_mask(m)
    validate_pair(img, m)

    if p.blur_sigma == 0 and p.brightness == 1 and p.contrast == 1:
        return img.copy()

    work = (img.astype(np.float64) + 1.0) * 0.5
    pivot = work.mean(axis=(0, 1))  # recorded before any distortion
    if p.blur_sigma > 0:
        work = gaussian_filter(work, sigma=(p.blur_sigma, p.blur_sigma, 0.0),
                               truncate=3.0)
    work = np.clip(p.brightness * work, 0.0, 1.0)
    work = np.clip(pivot + p.contrast * (work - pivot), 0.0, 1.0)
    distorted = (work * 2.0 - 1.0).astype(np.float32)
    return np.where(m[:, :, None] > 0, img, distorted)


def dataset_split_counts(total: int) -> tuple:
    """(clean, mild, heavy) counts scaling the 22:8:30 composition to `total`."""
    if total < 30:
        raise DegenerateInputError(f"dataset needs total >= 30, got {total}")
    clean = round(total * SPLIT_NUMERATORS[0] / SPLIT_DENOMINATOR)
    mild = round(total * SPLIT_NUMERATORS[1] / SPLIT_DENOMINATOR)
    heavy = total - clean - mild
    return clean, mild, heavy


def build_disc_dataset(images: list, total: int, rng_seed: int = 0,
                       names: list = None) -> tuple:
    """Build `total` labeled samples from source images.

    Returns (samples, records): samples is a list of LabeledSample; records is
    one manifest dict per sample with everything needed to rebuild it
    bit-identically (source name, mask kind/seed, params, label).
    """
    if not images:
        raise DegenerateInputError("need at least one source image")
    clean_n, mild_n, heavy_n = dataset_split_counts(total)
    if names is None:
        names = [f"index:{i}" for i in range(len(images))]
    if len(names) != len(images):
        raise ShapeError("names and images lengths differ")
    by_name = dict(zip(names, images))

    severities = ["clean"] * clean_n + ["mild"] * mild_n + ["heavy"] * heavy_n
    samples, records = [], []
    for index, severity in enumerate(severities):
        # Per-sample derived seed keeps parallel regeneration deterministic.
        seed = rng_seed + index
        rng = np.random.default_rng(seed)
        source = names[int(rng.integers(0, len(images)))]
        record = {"index": index, "source": source, "severity": severity}
        if severity == "clean":
            image = by_name[source]
            label = REAL_LABEL
        else:
            mask_kind = ["rectangular", "irregular_brush"][int(rng.integers(0, 2))]
            params = sample_params(severity, rng_seed=seed)
            image, label = _distorted_sample(by_name[source], mask_kind, seed, params)
            record.update(mask_kind=mask_kind, mask_seed=seed, params=asdict(params))
        record["label"] = label
        samples.append(LabeledSample(image=image, label=label))
        records.append(record)
    return samples, records


def _distorted_sample(img, mask_kind, mask_seed, params):
    mask = gen_mask(img.shape[0], mask_kind, rng_seed=mask_seed,
                    coverage=DATASET_MASK_COVERAGE)
    label = REAL_LABEL if params.severity == "mild" else FAKE_LABEL
    return apply_distortion(img, mask, params), label


def rebuild_from_records(records: list, images_by_name: dict) -> list:
    """Regenerate samples bit-identically from manifest records."""
    samples = []
    for record in records:
        img = images_by_name[record["source"]]
        if record["severity"] == "clean":
            samples.append(LabeledSample(image=img, label=record["label"]))
            continue
        params = DistortionParams(**record["params"])
        image, label = _distorted_sample(img, record["mask_kind"],
                                         record["mask_seed"], params)
        assert label == record["label"]
        samples.append(LabeledSample(image=image, label=label))
    return samples


def write_manifest(records: list, path) -> None:
    """Line-delimited JSON, one record per sample."""
    with open(path, "w") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True) + "\n")


def read_manifest(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
