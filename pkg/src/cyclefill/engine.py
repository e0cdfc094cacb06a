"""The fill -> encode -> generate -> composite -> score cycle, best-cycle
selection, optional Unet refinement, and on-disk run persistence.

One engine invocation is sequential; concurrent invocations may share a
read-only bundle.
"""

import io
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image as PILImage

from . import imaging, models
from .errors import SelectionError, ShapeError
from .imaging import (
    FillPolicy,
    Sketch,
    apply_fill,
    compose_cycle_input,
    compose_refined,
)

MANIFEST_NAME = "manifest.json"
TIMINGS_NAME = "timings.json"  # wall-clock; the one non-deterministic artifact
SCORES_NAME = "scores.txt"


@dataclass
class InpaintRequest:
    image: np.ndarray
    mask: np.ndarray
    fill: FillPolicy
    cycles: int = 10
    use_discriminator: bool = True
    refine: bool = True
    seed: int = 0
    # Optional early stop: after min_cycles, stop on `patience` consecutive
    # score decreases. Off by default; the fixed-cycle argmax is the baseline.
    early_stop: bool = False
    early_stop_patience: int = 3
    min_cycles: int = 10

    def __post_init__(self):
        if self.cycles < 1:
            raise ValueError(f"cycles must be >= 1, got {self.cycles}")
        imaging.validate_image(self.image)
        imaging.validate_mask(self.mask)
        imaging.validate_pair(self.image, self.mask)


@dataclass
class CycleTrace:
    inputs: list = field(default_factory=list)
    generator_outputs: list = field(default_factory=list)
    composites: list = field(default_factory=list)
    scores: list = None  # None when the discriminator is disabled

    def __len__(self):
        return len(self.composites)


@dataclass
class InpaintResult:
    selected_cycle: int  # None in multi-result mode
    coarse: np.ndarray
    refined: np.ndarray  # None when refinement is off
    trace: CycleTrace
    timings: dict
    resized: bool = False


def run_cycles(bundle, req: InpaintRequest, on_cycle=None) -> CycleTrace:
    """Iterate the composite cycle `req.cycles` times from the filled image.

    Per cycle: embed the current input, regenerate, paste the generated hole
    into the original (the composite), optionally score the composite. The
    composite is the next cycle's input.
    """
    bundle.require("generator", "encoder")
    if req.use_discriminator:
        bundle.require("artifact_discriminator")
    image, mask = req.image, req.mask
    trace = CycleTrace(scores=[] if req.use_discriminator else None)

    current = apply_fill(image, mask, req.fill)
    for i in range(req.cycles):
        trace.inputs.append(current)
        z = models.encode(bundle.encoder, current)
        generated = models.generate(bundle.generator, z)
        if generated.shape != image.shape:
            raise ShapeError(f"generator returned {generated.shape}, "
                             f"expected {image.shape}")
        composite = compose_cycle_input(image, mask, generated)
        trace.generator_outputs.append(generated)
        trace.composites.append(composite)
        score = None
        if req.use_discriminator:
            score = models.discriminate(bundle.artifact_discriminator, composite)
            trace.scores.append(score)
        if on_cycle is not None:
            on_cycle(i, composite, score)
        current = composite
        if (req.early_stop and req.use_discriminator
                and i + 1 >= req.min_cycles
                and _tail_decreasing(trace.scores, req.early_stop_patience)):
            break
    return trace


def _tail_decreasing(scores, patience):
    if len(scores) < patience + 1:
        return False
    tail = scores[-(patience + 1):]
    return all(b < a for a, b in zip(tail, tail[1:]))


def select_best(trace: CycleTrace) -> int:
    """Index of the highest-scoring cycle; ties break toward the earliest."""
    if trace.scores is None or not trace.scores:
        raise SelectionError("trace has no scores; run with the discriminator enabled")
    return int(np.argmax(trace.scores))


def inpaint(bundle, req: InpaintRequest, on_cycle=None) -> InpaintResult:
    """Full pipeline: cycles, selection (or multi-result), optional refinement."""
    timings = {}
    req, resized = _fit_to_bundle(bundle, req)
    start = time.perf_counter()
    trace = run_cycles(bundle, req, on_cycle=on_cycle)
    timings["cycles_s"] = time.perf_counter() - start

    if req.use_discriminator:
        selected = select_best(trace)
    else:
        selected = None  # multi-result mode: all composites stand
    coarse = trace.composites[selected if selected is not None else -1]

    refined = None
    if req.refine:
        bundle.require("refiner")
        start = time.perf_counter()
        refined = _refine_composite(bundle, coarse, req.mask)
        timings["refine_s"] = time.perf_counter() - start

    return InpaintResult(selected_cycle=selected, coarse=coarse, refined=refined,
                         trace=trace, timings=timings, resized=resized)


def _fit_to_bundle(bundle, req: InpaintRequest):
    """Resize request images to the bundle resolution when they differ."""
    res = bundle.arch.resolution
    if req.image.shape[:2] == (res, res):
        return req, False
    image = imaging.resize_image(req.image, res)
    mask = imaging.resize_mask(req.mask, res)
    fill = req.fill
    if fill.kind == "sketch":
        sk = fill.sketch
        alpha = imaging.resize_mask((sk.alpha > 0).astype(np.float32), res)
        color = imaging.resize_image(sk.color, res)
        alpha = np.where(mask > 0, 0.0, alpha).astype(np.float32)
        fill = FillPolicy.from_sketch(Sketch(color=color, alpha=alpha))
    return InpaintRequest(image=image, mask=mask, fill=fill, cycles=req.cycles,
                          use_discriminator=req.use_discriminator,
                          refine=req.refine, seed=req.seed,
                          early_stop=req.early_stop,
                          early_stop_patience=req.early_stop_patience,
                          min_cycles=req.min_cycles), True


def _refine_composite(bundle, coarse: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Refine the hole; the known region stays bit-identical to the coarse image.

    When the refiner runs at a higher resolution than the bundle, the coarse
    image is bilinearly upsampled for the forward pass and the refined hole is
    downsampled back before compositing.
    """
    target = bundle.refiner.resolution
    if coarse.shape[0] != target:
        up = imaging.resize_image(coarse, target)
        out = models.refine(bundle.refiner, up)
        unet_out = imaging.resize_image(out, coarse.shape[0])
    else:
        unet_out = models.refine(bundle.refiner, coarse)
    return compose_refined(coarse, mask, unet_out)


# ---------------------------------------------------------------------------
# Run persistence
# ---------------------------------------------------------------------------
# Directory layout per run: input.png, mask.png, sketch.png (sketch fill only),
# cycle_{i}.png, scores.txt, coarse.png, refined.png, manifest.json,
# timings.json. Everything except timings.json is deterministic for a fixed
# (bundle, request, seed).

def fill_to_manifest(fill: FillPolicy) -> dict:
    entry = {"kind": fill.kind, "rng_seed": fill.rng_seed}
    if fill.kind == "constant":
        entry["constant_color"] = list(fill.constant_color)
    elif fill.kind == "zero_mean_noise":
        entry["noise_sigma"] = fill.noise_sigma
    elif fill.kind == "sketch":
        entry["sketch_file"] = "sketch.png"
    return entry


def fill_from_manifest(entry: dict, run_dir=None) -> FillPolicy:
    kind = entry["kind"]
    if kind == "mean":
        return FillPolicy(kind="mean", rng_seed=entry.get("rng_seed", 0))
    if kind == "constant":
        return FillPolicy(kind="constant",
                          constant_color=tuple(entry["constant_color"]),
                          rng_seed=entry.get("rng_seed", 0))
    if kind == "zero_mean_noise":
        return FillPolicy(kind="zero_mean_noise", noise_sigma=entry["noise_sigma"],
                          rng_seed=entry.get("rng_seed", 0))
    if kind == "sketch":
        if run_dir is None:
            raise ValueError("sketch fill needs the run directory to reload strokes")
        return FillPolicy.from_sketch(load_sketch_png(run_dir / entry["sketch_file"]))
    raise ValueError(f"unknown fill kind {kind!r} in manifest")


def save_sketch_png(sketch: Sketch, path) -> None:
    """RGBA PNG: color in the RGB bytes, alpha in the A byte."""
    rgb = imaging.unit_range_to_bytes(sketch.color)
    a = np.rint(sketch.alpha * 255.0).astype(np.uint8)
    PILImage.fromarray(np.dstack([rgb, a]), mode="RGBA").save(path, format="PNG")


def load_sketch_png(path) -> Sketch:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGBA"), dtype=np.uint8)
    color = imaging.bytes_to_unit_range(arr[:, :, :3])
    alpha = arr[:, :, 3].astype(np.float32) / np.float32(255.0)
    return Sketch(color=color, alpha=alpha)


def load_sketch_png_bytes(data: bytes) -> Sketch:
    return load_sketch_png(io.BytesIO(data))


def run_job(bundle, req: InpaintRequest, out_dir, bundle_name: str = "",
            on_cycle=None) -> InpaintResult:
    """Run a full inpaint and persist every artifact under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    fitted, resized = _fit_to_bundle(bundle, req)
    for stale in list(out.glob("cycle_*.png")) + [out / SCORES_NAME]:
        if stale.exists():
            stale.unlink()
    imaging.save_image(fitted.image, out / "input.png")
    imaging.save_mask(fitted.mask, out / "mask.png")
    if fitted.fill.kind == "sketch":
        save_sketch_png(fitted.fill.sketch, out / "sketch.png")
    scores_path = out / SCORES_NAME

    def persist_cycle(i, composite, score):
        imaging.save_image(composite, out / f"cycle_{i}.png")
        if score is not None:
            with open(scores_path, "a") as fh:
                fh.write(f"{i} {score:.6f}\n")
        if on_cycle is not None:
            on_cycle(i, composite, score)

    result = inpaint(bundle, fitted, on_cycle=persist_cycle)
    result.resized = resized
    imaging.save_image(result.coarse, out / "coarse.png")
    if result.refined is not None:
        imaging.save_image(result.refined, out / "refined.png")

    artifacts = ["input.png", "mask.png", "coarse.png"]
    artifacts += [f"cycle_{i}.png" for i in range(len(result.trace))]
    if result.refined is not None:
        artifacts.append("refined.png")
    if fitted.fill.kind == "sketch":
        artifacts.append("sketch.png")
    if result.trace.scores is not None:
        artifacts.append(SCORES_NAME)
    manifest = {
        "format": 1,
        "bundle": {"name": bundle_name, "version": bundle.version,
                   "resolution": bundle.arch.resolution},
        "request": {
            "fill": fill_to_manifest(fitted.fill),
            "cycles": fitted.cycles,
            "use_discriminator": fitted.use_discriminator,
            "refine": fitted.refine,
            "seed": fitted.seed,
        },
        "resized": resized,
        "selected_cycle": result.selected_cycle,
        "completed_cycles": len(result.trace),
        "artifacts": sorted(artifacts),
    }
    with open(out / MANIFEST_NAME, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    with open(out / TIMINGS_NAME, "w") as fh:
        json.dump(result.timings, fh, indent=1)
    return result


def load_manifest(run_dir) -> dict:
    with open(Path(run_dir) / MANIFEST_NAME) as fh:
        return json.load(fh)


def replay_request(run_dir) -> InpaintRequest:
    """Rebuild the request of a persisted run from its manifest + artifacts."""
    run_dir = Path(run_dir)
    manifest = load_manifest(run_dir)
    res = manifest["bundle"]["resolution"]
    image = imaging.load_image(run_dir / "input.png", res)
    mask = imaging.load_mask(run_dir / "mask.png", res)
    entry = manifest["request"]
    return InpaintRequest(
        image=image, mask=mask,
        fill=fill_from_manifest(entry["fill"], run_dir),
        cycles=entry["cycles"],
        use_discriminator=entry["use_discriminator"],
        refine=entry["refine"],
        seed=entry["seed"],
    )
