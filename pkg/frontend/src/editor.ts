/**
 * Editor state: the loaded base image, the mask and sketch layers, brush
 * settings, and job parameters. DOM-free so the whole workflow is scriptable;
 * the canvas bindings in app.ts are a thin view over this.
 *
 * The base image is kept as the exact PNG bytes that will be uploaded; the
 * editor never resamples it.
 */

import { JobStatus, JobSubmission, ServiceClient } from "./api.js";
import { decodePng } from "./png.js";
import { encodePng } from "./png.js";
import { MaskLayer, Rgb, SketchLayer } from "./raster.js";

export type BrushMode = "mask" | "erase" | "sketch";

export interface BrushSettings {
  radius: number;
  mode: BrushMode;
  color: Rgb;
}

export interface JobParams {
  fill: string;
  constantColor?: string;
  noiseSigma?: number;
  cycles: number;
  useDiscriminator: boolean;
  refine: boolean;
  seed: number;
}

export interface BaseImage {
  png: Uint8Array;
  width: number;
  height: number;
  /** RGB pixels for display; decoding never feeds back into the upload. */
  pixels: Uint8Array;
}

export class EditorState {
  base: BaseImage | null = null;
  mask: MaskLayer | null = null;
  sketch: SketchLayer | null = null;
  brush: BrushSettings = { radius: 6, mode: "mask", color: [255, 32, 32] };
  params: JobParams = {
    fill: "mean",
    cycles: 10,
    useDiscriminator: true,
    refine: true,
    seed: 0,
  };
  private lastPoint: [number, number] | null = null;

  async loadBase(png: Uint8Array): Promise<void> {
    const decoded = await decodePng(png);
    let pixels: Uint8Array;
    if (decoded.channels === 3) {
      pixels = decoded.data;
    } else if (decoded.channels === 1) {
      pixels = new Uint8Array(decoded.width * decoded.height * 3);
      for (let i = 0; i < decoded.data.length; i++) {
        pixels[i * 3] = pixels[i * 3 + 1] = pixels[i * 3 + 2] = decoded.data[i];
      }
    } else {
      pixels = new Uint8Array(decoded.width * decoded.height * 3);
      for (let i = 0; i < decoded.width * decoded.height; i++) {
        pixels[i * 3] = decoded.data[i * 4];
        pixels[i * 3 + 1] = decoded.data[i * 4 + 1];
        pixels[i * 3 + 2] = decoded.data[i * 4 + 2];
      }
    }
    this.base = { png, width: decoded.width, height: decoded.height, pixels };
    this.mask = new MaskLayer(decoded.width, decoded.height);
    this.sketch = new SketchLayer(decoded.width, decoded.height);
    this.lastPoint = null;
  }

  get loaded(): boolean {
    return this.base !== null;
  }

  clearLayers(): void {
    this.mask?.clear();
    this.sketch?.clear();
    this.lastPoint = null;
  }

  beginStroke(x: number, y: number): void {
    this.lastPoint = [x, y];
    this.applyStamp(x, y, x, y);
  }

  continueStroke(x: number, y: number): void {
    if (!this.lastPoint) {
      this.beginStroke(x, y);
      return;
    }
    const [px, py] = this.lastPoint;
    this.applyStamp(px, py, x, y);
    this.lastPoint = [x, y];
  }

  endStroke(): void {
    this.lastPoint = null;
  }

  private applyStamp(x0: number, y0: number, x1: number, y1: number): void {
    if (!this.mask || !this.sketch) return;
    const { radius, mode, color } = this.brush;
    if (mode === "mask") {
      this.mask.stampSegment(x0, y0, x1, y1, radius, false);
    } else if (mode === "erase") {
      this.mask.stampSegment(x0, y0, x1, y1, radius, true);
      this.sketch.clipToHole(this.mask); // strokes never outlive their hole
    } else {
      this.sketch.stampSegment(x0, y0, x1, y1, radius, color, this.mask);
    }
  }

  /** 0/255 grayscale bitmap, 0 where brushed; the service-side decode input. */
  exportMask(): Uint8Array {
    if (!this.mask) throw new Error("no image loaded");
    return this.mask.exportBitmap();
  }

  async exportMaskPng(): Promise<Uint8Array> {
    if (!this.mask) throw new Error("no image loaded");
    return encodePng(this.exportMask(), this.mask.width, this.mask.height, 1);
  }

  async exportSketchPng(): Promise<Uint8Array | null> {
    if (!this.sketch || !this.sketch.hasPaint()) return null;
    return encodePng(this.sketch.exportRgba(), this.sketch.width,
                     this.sketch.height, 4);
  }

  async buildSubmission(): Promise<JobSubmission> {
    if (!this.base || !this.mask) throw new Error("no image loaded");
    if (this.mask.holeCount() === 0) throw new Error("mask is empty");
    const sketchPng = await this.exportSketchPng();
    const fill = sketchPng ? "sketch" : this.params.fill;
    return {
      imagePng: this.base.png, // exact upload bytes, never resampled
      maskPng: await this.exportMaskPng(),
      sketchPng,
      fill,
      constantColor: this.params.constantColor,
      noiseSigma: this.params.noiseSigma,
      cycles: this.params.cycles,
      useDiscriminator: this.params.useDiscriminator,
      refine: this.params.refine,
      seed: this.params.seed,
    };
  }

  async submit(client: ServiceClient): Promise<string> {
    return client.submitJob(await this.buildSubmission());
  }

  /** Seed the editor with a finished job's chosen composite and start over. */
  async iterateFromResult(client: ServiceClient, job: JobStatus,
                          pick: number | "coarse" | "refined"): Promise<void> {
    if (job.state !== "done" || !job.urls) {
      throw new Error("job is not done");
    }
    let url: string;
    if (pick === "coarse") url = job.urls.coarse;
    else if (pick === "refined") {
      if (!job.urls.refined) throw new Error("no refined artifact");
      url = job.urls.refined;
    } else {
      url = job.urls.cycles[pick];
      if (!url) throw new Error(`no cycle ${pick}`);
    }
    const png = await client.fetchArtifact(url);
    await this.loadBase(png);
  }
}
