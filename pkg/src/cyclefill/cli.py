"""Command-line entry points: training, dataset synthesis, single-shot
inpainting, evaluation grids, and serving.

Exit codes: 0 ok, 1 runtime failure, 2 usage error.
"""

import sys
from pathlib import Path

import click
import numpy as np

from . import engine, imaging
from .errors import CycleFillError
from .models import ArchConfig, load_bundle, save_bundle

FILL_CHOICES = ("mean", "noise", "white", "black", "constant", "sketch")


def _fail(message: str):
    click.echo(f"error: {message}", err=True)
    sys.exit(1)


def _load_bundle(path):
    try:
        return load_bundle(path).eval_mode()
    except CycleFillError as exc:
        _fail(str(exc))


def _build_fill(fill, constant_color, sketch_path, noise_sigma, seed):
    sketch = None
    if sketch_path is not None:
        sketch = engine.load_sketch_png(sketch_path)
        fill = "sketch"
    color = None
    if constant_color:
        color = tuple(float(v) for v in constant_color.split(","))
    return imaging.fill_policy_from_spec(fill, constant_color=color,
                                         noise_sigma=noise_sigma, sketch=sketch,
                                         rng_seed=seed)


def common_options(fn):
    fn = click.option("--seed", type=int, default=0, show_default=True,
                      help="Random seed; runs are deterministic under it.")(fn)
    fn = click.option("--config", "config_path", type=click.Path(), default=None,
                      help="INI config file with per-pipeline sections.")(fn)
    return fn


@click.group()
def main():
    """Cyclic inpainting toolkit: train, synthesize data, inpaint, serve."""


# ---------------------------------------------------------------------------
# inpaint
# ---------------------------------------------------------------------------

@main.command("inpaint")
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), required=True,
              help="Checkpoint with all four networks.")
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True), required=True)
@click.option("--fill", type=click.Choice(FILL_CHOICES), default="mean",
              show_default=True, help="Hole fill policy.")
@click.option("--constant-color", default=None,
              help="r,g,b in [-1,1] for --fill constant.")
@click.option("--noise-sigma", type=float, default=0.25, show_default=True,
              help="Sigma for --fill noise.")
@click.option("--sketch", "sketch_path", type=click.Path(exists=True), default=None,
              help="RGBA sketch PNG (implies sketch fill).")
@click.option("--cycles", type=int, default=10, show_default=True)
@click.option("--no-discriminator", is_flag=True, default=False,
              help="Disable scoring; keep all cycle composites (multi-result).")
@click.option("--no-refine", is_flag=True, default=False,
              help="Skip the Unet refinement stage.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@common_options
def inpaint_cmd(bundle_path, image_path, mask_path, fill, constant_color,
                noise_sigma, sketch_path, cycles, no_discriminator, no_refine,
                out_dir, seed, config_path):
    """Inpaint one image and write the run directory."""
    bundle = _load_bundle(bundle_path)
    try:
        image = imaging.load_image(image_path, None)
        mask = imaging.load_mask(mask_path, image.shape[0])
        policy = _build_fill(fill, constant_color, sketch_path, noise_sigma, seed)
        req = engine.InpaintRequest(image=image, mask=mask, fill=policy,
                                    cycles=cycles,
                                    use_discriminator=not no_discriminator,
                                    refine=not no_refine, seed=seed)
        result = engine.run_job(bundle, req, out_dir,
                                bundle_name=Path(bundle_path).stem)
    except (CycleFillError, OSError, ValueError) as exc:
        _fail(str(exc))
    if result.trace.scores is not None:
        click.echo("cycle  score")
        for i, score in enumerate(result.trace.scores):
            marker = "  <- selected" if i == result.selected_cycle else ""
            click.echo(f"{i:5d}  {score:.4f}{marker}")
        click.echo(f"selected cycle: {result.selected_cycle}")
    else:
        click.echo(f"wrote {len(result.trace)} cycle composites (no selection)")
    click.echo(f"results in {out_dir}")


# ---------------------------------------------------------------------------
# grid
# ---------------------------------------------------------------------------

def _montage_row(panels, pad=2):
    height = panels[0].shape[0]
    spacer = np.ones((height, pad, 3), dtype=np.float32)
    cells = []
    for panel in panels:
        cells.extend([panel, spacer])
    return np.concatenate(cells[:-1], axis=1)


def _mask_panel(mask):
    return np.repeat(((mask * 2.0) - 1.0)[:, :, None], 3, axis=2).astype(np.float32)


@main.command("grid")
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), required=True)
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--mask", "mask_path", type=click.Path(exists=True), required=True)
@click.option("--fills", default="mean,noise,white,black", show_default=True,
              help="Comma-separated fill policies, one montage row each.")
@click.option("--cycles", type=int, default=10, show_default=True)
@click.option("--no-refine", is_flag=True, default=False)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@common_options
def grid_cmd(bundle_path, image_path, mask_path, fills, cycles, no_refine,
             out_dir, seed, config_path):
    """Run several fill policies and write per-fill montages + a contact sheet.

    Row panels: input, mask, masked, coarse, refined.
    """
    bundle = _load_bundle(bundle_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    try:
        image = imaging.load_image(image_path, None)
        mask = imaging.load_mask(mask_path, image.shape[0])
        for fill in [f.strip() for f in fills.split(",") if f.strip()]:
            policy = _build_fill(fill, None, None, 0.25, seed)
            req = engine.InpaintRequest(image=image, mask=mask, fill=policy,
                                        cycles=cycles, refine=not no_refine,
                                        seed=seed)
            result = engine.inpaint(bundle, req)
            res = result.coarse.shape[0]
            panels = [imaging.resize_image(image, res), _mask_panel(
                imaging.resize_mask(mask, res)),
                imaging.apply_fill(imaging.resize_image(image, res),
                                   imaging.resize_mask(mask, res), policy),
                result.coarse,
                result.refined if result.refined is not None else result.coarse]
            row = _montage_row(panels)
            imaging.save_image(row, out / f"grid_{fill}.png")
            rows.append(row)
            click.echo(f"{fill}: selected cycle {result.selected_cycle}")
        sheet = np.concatenate(rows, axis=0)
        imaging.save_image(sheet, out / "contact_sheet.png")
    except (CycleFillError, OSError, ValueError) as exc:
        _fail(str(exc))
    click.echo(f"wrote {len(rows)} rows to {out}")


# ---------------------------------------------------------------------------
# synth-distort
# ---------------------------------------------------------------------------

@main.command("synth-distort")
@click.option("--images", "images_dir", type=click.Path(exists=True), required=True,
              help="Directory of source images.")
@click.option("--total", type=int, default=600, show_default=True)
@click.option("--resolution", type=int, default=64, show_default=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--write-images/--manifest-only", default=True, show_default=True)
@common_options
def synth_distort_cmd(images_dir, total, resolution, out_dir, write_images,
                      seed, config_path):
    """Build the labeled artifact dataset and its line-delimited manifest."""
    from .distortion import build_disc_dataset, write_manifest
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        root = Path(images_dir)
        paths = sorted(p for p in root.rglob("*")
                       if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not paths:
            _fail(f"no images under {images_dir}")
        names = [str(p.relative_to(root)) for p in paths]
        images = [imaging.load_image(p, resolution) for p in paths]
        samples, records = build_disc_dataset(images, total=total, rng_seed=seed,
                                              names=names)
        write_manifest(records, out / "manifest.jsonl")
        if write_images:
            sample_dir = out / "samples"
            sample_dir.mkdir(exist_ok=True)
            for i, sample in enumerate(samples):
                imaging.save_image(sample.image, sample_dir / f"{i:06d}.png")
    except (CycleFillError, OSError, ValueError) as exc:
        _fail(str(exc))
    by_sev = {}
    for record in records:
        by_sev[record["severity"]] = by_sev.get(record["severity"], 0) + 1
    click.echo(f"wrote {len(records)} manifest lines: "
               f"{by_sev.get('clean', 0)} clean / {by_sev.get('mild', 0)} mild "
               f"(label 0.9), {by_sev.get('heavy', 0)} heavy (label 0.1)")


# ---------------------------------------------------------------------------
# training commands
# ---------------------------------------------------------------------------

def _train_config(pipeline, config_path, data_dir, out_dir, seed, epochs):
    from .training import config_from_file, default_config
    from dataclasses import replace
    cfg = config_from_file(config_path, pipeline) if config_path \
        else default_config(pipeline)
    overrides = {"seed": seed}
    if data_dir is not None:
        overrides["data_dir"] = str(data_dir)
    if out_dir is not None:
        overrides["out_dir"] = str(out_dir)
    if epochs is not None:
        overrides["epochs"] = epochs
    return replace(cfg, **overrides)


@main.command("train-crg")
@click.option("--data-dir", type=click.Path(exists=True), required=True,
              help="Directory of training images.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--epochs", type=int, default=None, help="Override encoder epochs.")
@click.option("--resolution", type=int, default=64, show_default=True)
@click.option("--latent-dim", type=int, default=128, show_default=True)
@common_options
def train_crg_cmd(data_dir, out_dir, epochs, resolution, latent_dim, seed,
                  config_path):
    """Train the generator+encoder pair; emits a partial bundle."""
    from .training import train_crg
    cfg = _train_config("crg", config_path, data_dir, out_dir, seed, epochs)
    arch = ArchConfig(resolution=resolution, latent_dim=latent_dim)
    try:
        report, bundle = train_crg(cfg, data_dir, arch=arch)
    except (CycleFillError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"best epoch {report.best_epoch} "
               f"(val {report.best_val_loss:.4f}); "
               f"checkpoint: {report.checkpoint_paths.get('best')}")


@main.command("train-disc")
@click.option("--data-dir", type=click.Path(exists=True), required=True,
              help="Directory of clean source images.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--total", type=int, default=600, show_default=True,
              help="Labeled dataset size synthesized from the sources.")
@click.option("--epochs", type=int, default=None, help="Override epochs.")
@click.option("--resolution", type=int, default=64, show_default=True)
@click.option("--merge-into", type=click.Path(exists=True), default=None,
              help="Existing bundle to merge the trained scorer into.")
@common_options
def train_disc_cmd(data_dir, out_dir, total, epochs, resolution, merge_into,
                   seed, config_path):
    """Synthesize the artifact dataset and train the scoring discriminator."""
    from .distortion import build_disc_dataset
    from .training import train_discriminator
    cfg = _train_config("discriminator", config_path, data_dir, out_dir, seed,
                        epochs)
    try:
        root = Path(data_dir)
        paths = sorted(p for p in root.rglob("*")
                       if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not paths:
            _fail(f"no images under {data_dir}")
        images = [imaging.load_image(p, resolution) for p in paths]
        samples, _ = build_disc_dataset(images, total=total, rng_seed=seed)
        arch = ArchConfig(resolution=resolution)
        report, bundle = train_discriminator(cfg, samples, arch=arch)
        if merge_into:
            merged = load_bundle(merge_into)
            merged.artifact_discriminator = bundle.artifact_discriminator
            save_bundle(merged, merge_into)
            click.echo(f"merged scorer into {merge_into}")
    except (CycleFillError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"best epoch {report.best_epoch} "
               f"(val {report.best_val_loss:.4f}); "
               f"checkpoint: {report.checkpoint_paths.get('best')}")


@main.command("train-refiner")
@click.option("--bundle", "bundle_path", type=click.Path(exists=True), required=True,
              help="Coarse-stage bundle used to self-generate training triples.")
@click.option("--data-dir", type=click.Path(exists=True), required=True,
              help="Directory of original images.")
@click.option("--out-dir", type=click.Path(), required=True)
@click.option("--samples", type=int, default=500, show_default=True,
              help="Number of (coarse, mask, original) triples to generate.")
@click.option("--epochs", type=int, default=None, help="Override epochs.")
@click.option("--merge-into", type=click.Path(exists=True), default=None,
              help="Existing bundle to merge the trained refiner into.")
@common_options
def train_refiner_cmd(bundle_path, data_dir, out_dir, samples, epochs,
                      merge_into, seed, config_path):
    """Generate coarse results with the engine, cache them, train the Unet."""
    from .training import build_refiner_dataset, train_refiner
    cfg = _train_config("refiner", config_path, data_dir, out_dir, seed, epochs)
    try:
        bundle = _load_bundle(bundle_path)
        arch = bundle.arch
        root = Path(data_dir)
        paths = sorted(p for p in root.rglob("*")
                       if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
        if not paths:
            _fail(f"no images under {data_dir}")
        images = [imaging.load_image(p, arch.resolution) for p in paths]
        cache = Path(out_dir) / "refiner_data.npz"
        if cache.exists():
            data = np.load(cache)
            triples = list(zip(data["coarse"], data["mask"], data["org"]))
            click.echo(f"loaded {len(triples)} cached triples from {cache}")
        else:
            triples = build_refiner_dataset(bundle, images, n_samples=samples,
                                            seed=seed,
                                            size=arch.refiner_resolution)
            Path(out_dir).mkdir(parents=True, exist_ok=True)
            np.savez_compressed(
                cache,
                coarse=np.stack([t[0] for t in triples]),
                mask=np.stack([t[1] for t in triples]),
                org=np.stack([t[2] for t in triples]))
            click.echo(f"cached {len(triples)} triples to {cache}")
        report, trained = train_refiner(cfg, triples, arch=arch)
        if merge_into:
            merged = load_bundle(merge_into)
            merged.refiner = trained.refiner
            save_bundle(merged, merge_into)
            click.echo(f"merged refiner into {merge_into}")
    except (CycleFillError, OSError) as exc:
        _fail(str(exc))
    click.echo(f"best epoch {report.best_epoch} "
               f"(val {report.best_val_loss:.4f}); "
               f"checkpoint: {report.checkpoint_paths.get('best')}")


# ---------------------------------------------------------------------------
# serve
# ---------------------------------------------------------------------------

@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", type=int, default=8000, show_default=True)
@click.option("--runs-dir", type=click.Path(), default="runs", show_default=True)
@click.option("--bundles-dir", type=click.Path(), default="bundles",
              show_default=True)
@click.option("--workers", type=int, default=1, show_default=True,
              help="Concurrent job executors.")
@click.option("--ui-dir", type=click.Path(exists=True), default=None,
              help="Built web editor to serve at /ui.")
@common_options
def serve_cmd(host, port, runs_dir, bundles_dir, workers, ui_dir, seed,
              config_path):
    """Start the HTTP job service."""
    from .service import run_server
    run_server(runs_dir, bundles_dir, host=host, port=port, workers=workers,
               ui_dir=ui_dir)


if __name__ == "__main__":
    main()
