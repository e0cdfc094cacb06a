import filecmp
import json
from pathlib import Path

import numpy as np
import pytest

from cyclefill.engine import (
    InpaintRequest,
    inpaint,
    load_manifest,
    replay_request,
    run_cycles,
    run_job,
    select_best,
)
from cyclefill.errors import SelectionError
from cyclefill.imaging import FillPolicy
from cyclefill.models import build_bundle, ArchConfig

from conftest import rand_image, rand_mask, stub_bundle


def hole_mask(size, r0, c0, h, w):
    m = np.ones((size, size), dtype=np.float32)
    m[r0:r0 + h, c0:c0 + w] = 0.0
    return m


# ---------------------------------------------------------------------------
# run_cycles
# ---------------------------------------------------------------------------

def test_identity_generator_fixed_point(rng):
    image = rand_image(rng, 32)
    mask = hole_mask(32, 8, 8, 10, 10)
    bundle = stub_bundle(image)  # generator returns `image` exactly
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(), cycles=5)
    trace = run_cycles(bundle, req)
    assert len(trace) == 5
    for composite in trace.composites:
        assert (composite == image).all()


def test_trace_structure_and_known_region(rng):
    image = rand_image(rng, 32)
    filler = rand_image(rng, 32)
    mask = hole_mask(32, 4, 6, 12, 9)
    bundle = stub_bundle(filler)
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(), cycles=4)
    trace = run_cycles(bundle, req)
    assert len(trace.inputs) == len(trace.generator_outputs) == len(trace.composites) == 4
    assert len(trace.scores) == 4
    known = mask > 0
    for composite in trace.composites:
        assert (composite[known] == image[known]).all()
        assert (composite[~known] == filler[~known]).all()


def test_scores_absent_when_disabled(rng):
    image = rand_image(rng, 32)
    bundle = stub_bundle(image)
    req = InpaintRequest(image=image, mask=hole_mask(32, 0, 0, 8, 8),
                         fill=FillPolicy.mean(), cycles=3, use_discriminator=False,
                         refine=False)
    trace = run_cycles(bundle, req)
    assert trace.scores is None


def test_empty_mask_means_input_everywhere(rng):
    image = rand_image(rng, 32)
    other = rand_image(rng, 32)
    bundle = stub_bundle(other)
    ones = np.ones((32, 32), dtype=np.float32)
    req = InpaintRequest(image=image, mask=ones, fill=FillPolicy.mean(), cycles=3,
                         refine=False)
    result = inpaint(bundle, req)
    for composite in result.trace.composites:
        assert (composite == image).all()


# ---------------------------------------------------------------------------
# select_best
# ---------------------------------------------------------------------------

def test_select_best_highest_score_pattern(rng):
    # Score trace peaking at 0.909 on the 8th cycle (index 7).
    scores = [0.31, 0.45, 0.58, 0.66, 0.74, 0.81, 0.87, 0.909, 0.88, 0.85]
    image = rand_image(rng, 32)
    bundle = stub_bundle(image, scores=scores)
    req = InpaintRequest(image=image, mask=hole_mask(32, 8, 8, 8, 8),
                         fill=FillPolicy.mean(), cycles=10, refine=False)
    trace = run_cycles(bundle, req)
    assert trace.scores == pytest.approx(scores, abs=1e-6)
    assert select_best(trace) == 7


def test_select_best_ties_and_monotone(rng):
    image = rand_image(rng, 32)
    mask = hole_mask(32, 8, 8, 8, 8)
    increasing = [0.1, 0.2, 0.3, 0.4, 0.5]
    bundle = stub_bundle(image, scores=increasing)
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(),
                         cycles=5, refine=False)
    assert select_best(run_cycles(bundle, req)) == 4

    bundle = stub_bundle(image, scores=[0.7] * 5)
    assert select_best(run_cycles(bundle, req)) == 0


def test_select_best_invariant_under_monotone_transform():
    from cyclefill.engine import CycleTrace
    rng = np.random.default_rng(0)
    for _ in range(20):
        scores = list(rng.uniform(0.01, 0.99, size=7))
        trace = CycleTrace(scores=scores)
        mapped = CycleTrace(scores=[s ** 3 / 2 for s in scores])  # strictly monotone
        assert select_best(trace) == select_best(mapped)


def test_select_best_requires_scores():
    from cyclefill.engine import CycleTrace
    with pytest.raises(SelectionError):
        select_best(CycleTrace(scores=None))
    with pytest.raises(SelectionError):
        select_best(CycleTrace(scores=[]))


# ---------------------------------------------------------------------------
# inpaint
# ---------------------------------------------------------------------------

def test_inpaint_refine_off(rng):
    image = rand_image(rng, 32)
    filler = rand_image(rng, 32)
    mask = hole_mask(32, 10, 10, 8, 8)
    bundle = stub_bundle(filler, scores=[0.2, 0.9, 0.4])
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(),
                         cycles=3, refine=False)
    result = inpaint(bundle, req)
    assert result.refined is None
    assert result.selected_cycle == 1
    assert (result.coarse == result.trace.composites[1]).all()


def test_inpaint_refined_keeps_known_region(rng):
    image = rand_image(rng, 32)
    filler = rand_image(rng, 32)
    mask = hole_mask(32, 4, 4, 16, 16)
    bundle = stub_bundle(filler, refiner_delta=0.25)
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(), cycles=3)
    result = inpaint(bundle, req)
    known = mask > 0
    assert (result.refined[known] == result.coarse[known]).all()
    assert not (result.refined[~known] == result.coarse[~known]).all()


def test_inpaint_multi_result_mode(rng):
    image = rand_image(rng, 32)
    filler = rand_image(rng, 32)
    mask = hole_mask(32, 4, 4, 10, 10)
    bundle = stub_bundle(filler)
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(),
                         cycles=6, use_discriminator=False, refine=False)
    result = inpaint(bundle, req)
    assert result.selected_cycle is None
    assert len(result.trace.composites) == 6
    assert (result.coarse == result.trace.composites[-1]).all()


def test_inpaint_deterministic(rng):
    image = rand_image(rng, 32)
    mask = hole_mask(32, 6, 6, 12, 12)
    bundle = build_bundle(ArchConfig(resolution=32, latent_dim=16, base_channels=8),
                          seed=4).eval_mode()
    bundle.refiner = None
    req = InpaintRequest(image=image, mask=mask,
                         fill=FillPolicy.noise(sigma=0.25, rng_seed=9),
                         cycles=4, refine=False)
    a = inpaint(bundle, req)
    b = inpaint(bundle, req)
    assert a.selected_cycle == b.selected_cycle
    for ca, cb in zip(a.trace.composites, b.trace.composites):
        assert (ca == cb).all()


def test_inpaint_auto_resizes(rng):
    # 64px request against a 32px bundle gets resized and flagged.
    image = rand_image(rng, 64)
    mask = hole_mask(64, 16, 16, 20, 20)
    filler = rand_image(rng, 32)
    bundle = stub_bundle(filler)
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(),
                         cycles=2, refine=False)
    result = inpaint(bundle, req)
    assert result.resized is True
    assert result.coarse.shape == (32, 32, 3)


def test_early_stop_after_consecutive_decreases(rng):
    image = rand_image(rng, 32)
    mask = hole_mask(32, 8, 8, 8, 8)
    scores = [0.2, 0.5, 0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05]
    bundle = stub_bundle(image, scores=scores)
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(),
                         cycles=12, refine=False, early_stop=True,
                         early_stop_patience=3, min_cycles=4)
    trace = run_cycles(bundle, req)
    # min_cycles=4 reached, then stops once three consecutive drops are seen.
    assert len(trace) == 6
    # Off by default: full cycle count runs.
    req = InpaintRequest(image=image, mask=mask, fill=FillPolicy.mean(),
                         cycles=12, refine=False)
    bundle = stub_bundle(image, scores=scores)
    assert len(run_cycles(bundle, req)) == 12


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

def test_run_job_persists_and_replays(tmp_path, rng):
    image = rand_image(rng, 32)
    filler = rand_image(rng, 32)
    mask = hole_mask(32, 6, 8, 10, 12)
    bundle = stub_bundle(filler, scores=[0.3, 0.8, 0.6])
    req = InpaintRequest(image=image, mask=mask,
                         fill=FillPolicy.constant((1.0, 1.0, 1.0)), cycles=3)
    out = tmp_path / "run1"
    result = run_job(bundle, req, out, bundle_name="stub")

    names = {p.name for p in out.iterdir()}
    assert {"input.png", "mask.png", "coarse.png", "refined.png", "scores.txt",
            "manifest.json", "timings.json", "cycle_0.png", "cycle_1.png",
            "cycle_2.png"} <= names

    manifest = load_manifest(out)
    assert manifest["selected_cycle"] == result.selected_cycle == 1
    scores_lines = (out / "scores.txt").read_text().strip().splitlines()
    assert len(scores_lines) == 3
    assert scores_lines[1].split()[0] == "1"

    # Replay from the persisted manifest: byte-identical artifacts.
    replayed = replay_request(out)
    out2 = tmp_path / "run2"
    run_job(bundle, replayed, out2, bundle_name="stub")
    compare = [n for n in names if n != "timings.json"]
    match, mismatch, errors = filecmp.cmpfiles(out, out2, compare, shallow=False)
    assert not mismatch and not errors


def test_run_job_deterministic_bytes(tmp_path, rng):
    image = rand_image(rng, 32)
    mask = hole_mask(32, 10, 4, 9, 14)
    bundle = build_bundle(ArchConfig(resolution=32, latent_dim=16, base_channels=8),
                          seed=11).eval_mode()
    bundle.refiner = None
    req = InpaintRequest(image=image, mask=mask,
                         fill=FillPolicy.noise(sigma=0.25, rng_seed=3),
                         cycles=3, refine=False)
    a, b = tmp_path / "a", tmp_path / "b"
    run_job(bundle, req, a)
    run_job(bundle, req, b)
    names = [p.name for p in a.iterdir() if p.name != "timings.json"]
    match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
    assert not mismatch and not errors
