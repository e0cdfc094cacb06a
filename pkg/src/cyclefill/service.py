"""HTTP job service: bundle registry, asynchronous inpaint jobs with
cycle-by-cycle progress, and artifact serving straight from the engine's
on-disk run directories.

Jobs execute FIFO on a small worker pool; the active bundle swaps only
between jobs under the registry lock. Run directories are the single source
of truth: restarting the service re-indexes finished jobs from disk.
"""

import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, File, Form, HTTPException, UploadFile
from fastapi.responses import JSONResponse, Response

from . import engine, imaging
from .errors import CheckpointError, CycleFillError
from .models import BUNDLE_NETWORKS, load_bundle


@dataclass
class BundleRef:
    name: str
    path: Path
    resolution: int = None
    loaded: bool = False


@dataclass
class Job:
    id: str
    state: str = "queued"
    progress: int = 0       # completed cycles, monotone
    cycles: int = 0
    use_discriminator: bool = True
    refine: bool = True
    run_dir: Path = None
    error: str = None
    request_echo: dict = field(default_factory=dict)


class ServiceState:
    def __init__(self, runs_dir, bundles_dir, workers: int = 1):
        self.runs_dir = Path(runs_dir)
        self.bundles_dir = Path(bundles_dir)
        self.runs_dir.mkdir(parents=True, exist_ok=True)
        self.bundles_dir.mkdir(parents=True, exist_ok=True)
        self.lock = threading.Lock()
        self.jobs: dict = {}
        self.active_name = None
        self.active_bundle = None
        self.executor = ThreadPoolExecutor(max_workers=workers)
        self.reindex()

    # -- bundles ------------------------------------------------------------

    def list_bundles(self) -> list:
        refs = []
        for path in sorted(self.bundles_dir.glob("*.ckpt")):
            refs.append(BundleRef(name=path.stem, path=path,
                                  resolution=self._peek_resolution(path),
                                  loaded=path.stem == self.active_name))
        return refs

    @staticmethod
    def _peek_resolution(path):
        import json
        import zipfile
        try:
            with zipfile.ZipFile(path) as zf:
                return json.loads(zf.read("header.json"))["arch"]["resolution"]
        except Exception:
            return None

    def load_bundle_by_name(self, name: str):
        path = self.bundles_dir / f"{name}.ckpt"
        if not path.exists():
            raise HTTPException(404, f"no bundle named {name!r}")
        try:
            bundle = load_bundle(path)
            bundle.require(*BUNDLE_NETWORKS)
        except CheckpointError as exc:
            raise HTTPException(422, f"cannot load bundle {name!r}: {exc}") from exc
        bundle.eval_mode()
        with self.lock:
            self.active_name = name
            self.active_bundle = bundle

    def set_active(self, name: str, bundle):
        """Install an in-memory bundle directly (tests, embedded use)."""
        bundle.eval_mode()
        with self.lock:
            self.active_name = name
            self.active_bundle = bundle

    # -- jobs ---------------------------------------------------------------

    def reindex(self):
        """Rebuild the done-job index from persisted run directories."""
        for run_dir in sorted(self.runs_dir.iterdir()) if self.runs_dir.exists() else []:
            manifest_path = run_dir / engine.MANIFEST_NAME
            if not run_dir.is_dir() or not manifest_path.exists():
                continue
            try:
                manifest = engine.load_manifest(run_dir)
            except Exception:
                continue
            request = manifest.get("request", {})
            job = Job(id=run_dir.name, state="done",
                      progress=manifest.get("completed_cycles", 0),
                      cycles=request.get("cycles", 0),
                      use_discriminator=request.get("use_discriminator", True),
                      refine=request.get("refine", True),
                      run_dir=run_dir, request_echo=request)
            self.jobs[job.id] = job

    def submit(self, req: engine.InpaintRequest, echo: dict) -> Job:
        with self.lock:
            if self.active_bundle is None:
                raise HTTPException(409, "no bundle loaded")
            job = Job(id=uuid.uuid4().hex[:12], cycles=req.cycles,
                      use_discriminator=req.use_discriminator, refine=req.refine,
                      run_dir=self.runs_dir / uuid.uuid4().hex[:12],
                      request_echo=echo)
            job.run_dir = self.runs_dir / job.id
            self.jobs[job.id] = job
        self.executor.submit(self._execute, job, req)
        return job

    def _execute(self, job: Job, req: engine.InpaintRequest):
        with self.lock:
            bundle = self.active_bundle
            bundle_name = self.active_name
            job.state = "running"

        def on_cycle(i, composite, score):
            job.progress = i + 1  # single writer; readers see monotone growth

        try:
            engine.run_job(bundle, req, job.run_dir, bundle_name=bundle_name,
                           on_cycle=on_cycle)
            job.state = "done"
        except Exception as exc:  # noqa: BLE001 - job failure is a state
            job.error = str(exc)
            job.state = "failed"

    def get_job(self, job_id: str) -> Job:
        job = self.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id!r}")
        return job


def _read_scores(run_dir: Path):
    path = run_dir / engine.SCORES_NAME
    if not path.exists():
        return None
    scores = {}
    for line in path.read_text().splitlines():
        index, value = line.split()
        scores[int(index)] = float(value)
    return [scores[i] for i in sorted(scores)]


def _parse_fill(fill: str, constant_color: str, noise_sigma, sketch_bytes,
                mask: np.ndarray, seed: int):
    color = None
    if constant_color:
        parts = [float(v) for v in constant_color.split(",")]
        if len(parts) != 3:
            raise ValueError("constant_color must be 'r,g,b' in [-1, 1]")
        color = tuple(parts)
    sketch = None
    if fill == "sketch":
        if sketch_bytes is None:
            raise ValueError("fill=sketch requires a sketch upload")
        sketch = engine.load_sketch_png_bytes(sketch_bytes)
        if sketch.alpha.shape != mask.shape:
            raise ValueError(f"sketch size {sketch.alpha.shape} does not match "
                             f"mask {mask.shape}")
        # Strokes are clipped to the hole at the service boundary.
        alpha = np.where(mask > 0, 0.0, sketch.alpha).astype(np.float32)
        sketch = imaging.Sketch(color=sketch.color, alpha=alpha)
    sigma = float(noise_sigma) if noise_sigma not in (None, "") else None
    return imaging.fill_policy_from_spec(fill, constant_color=color,
                                         noise_sigma=sigma, sketch=sketch,
                                         rng_seed=seed)


def create_app(runs_dir, bundles_dir, workers: int = 1, ui_dir=None) -> FastAPI:
    app = FastAPI(title="cyclefill service")
    state = ServiceState(runs_dir, bundles_dir, workers=workers)
    app.state.service = state
    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    @app.post("/api/jobs", status_code=202)
    def create_job(image: UploadFile = File(...), mask: UploadFile = File(...),
                   sketch: UploadFile = File(None),
                   fill: str = Form("mean"), constant_color: str = Form(None),
                   noise_sigma: str = Form(None), cycles: int = Form(10),
                   use_discriminator: bool = Form(True),
                   refine: bool = Form(True), seed: int = Form(0)):
        with state.lock:
            bundle = state.active_bundle
        if bundle is None:
            raise HTTPException(409, "no bundle loaded")

        def bad(field_name, message):
            return JSONResponse(status_code=400,
                                content={"detail": {"field": field_name,
                                                    "error": message}})

        image_bytes = image.file.read()
        mask_bytes = mask.file.read()
        try:
            img = imaging.image_from_bytes(image_bytes)  # native square size
        except (CycleFillError, OSError) as exc:
            return bad("image", str(exc))
        try:
            m = imaging.mask_from_bytes(mask_bytes, img.shape[0])
        except (CycleFillError, OSError) as exc:
            return bad("mask", str(exc))
        sketch_bytes = sketch.file.read() if sketch is not None else None
        try:
            policy = _parse_fill(fill, constant_color, noise_sigma, sketch_bytes,
                                 m, seed)
            req = engine.InpaintRequest(image=img, mask=m, fill=policy,
                                        cycles=cycles,
                                        use_discriminator=use_discriminator,
                                        refine=refine, seed=seed)
        except (ValueError, CycleFillError) as exc:
            return bad("params", str(exc))
        echo = {"fill": engine.fill_to_manifest(policy), "cycles": cycles,
                "use_discriminator": use_discriminator, "refine": refine,
                "seed": seed}
        job = state.submit(req, echo)
        return {"job_id": job.id}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = state.get_job(job_id)
        body = {"job_id": job.id, "state": job.state, "progress": job.progress,
                "cycles": job.cycles}
        if job.error:
            body["error"] = job.error
        base = f"/api/jobs/{job.id}"
        if job.state == "done":
            manifest = engine.load_manifest(job.run_dir)
            scores = _read_scores(job.run_dir)
            if scores is not None:
                body["scores"] = scores
                body["selected_cycle"] = manifest["selected_cycle"]
            body["urls"] = {
                "input": f"{base}/input.png",
                "mask": f"{base}/mask.png",
                "coarse": f"{base}/coarse.png",
                "cycles": [f"{base}/cycles/{i}.png" for i in range(job.progress)],
            }
            if (job.run_dir / "refined.png").exists():
                body["urls"]["refined"] = f"{base}/refined.png"
        return body

    def _artifact(job: Job, filename: str, cycle_pending: bool = False):
        path = job.run_dir / filename if job.run_dir else None
        if path is None or not path.exists():
            if cycle_pending and job.state in ("queued", "running"):
                raise HTTPException(409, f"{filename} not yet completed")
            raise HTTPException(404, f"no artifact {filename}")
        return Response(content=path.read_bytes(), media_type="image/png")

    @app.get("/api/jobs/{job_id}/cycles/{index}.png")
    def cycle_artifact(job_id: str, index: int):
        job = state.get_job(job_id)
        pending = index < job.cycles
        return _artifact(job, f"cycle_{index}.png", cycle_pending=pending)

    @app.get("/api/jobs/{job_id}/{name}.png")
    def named_artifact(job_id: str, name: str):
        if name not in ("input", "mask", "coarse", "refined", "sketch"):
            raise HTTPException(404, f"no artifact {name}.png")
        job = state.get_job(job_id)
        pending = name in ("coarse", "refined")
        return _artifact(job, f"{name}.png", cycle_pending=pending)

    @app.get("/api/bundles")
    def bundles():
        return {"bundles": [{"name": ref.name, "resolution": ref.resolution,
                             "loaded": ref.loaded}
                            for ref in state.list_bundles()]}

    @app.post("/api/bundles/{name}/load")
    def load(name: str):
        state.load_bundle_by_name(name)
        return {"loaded": name}

    return app


def run_server(runs_dir, bundles_dir, host="127.0.0.1", port=8000, workers=1,
               ui_dir=None):
    import uvicorn
    app = create_app(runs_dir, bundles_dir, workers=workers, ui_dir=ui_dir)
    uvicorn.run(app, host=host, port=port)
