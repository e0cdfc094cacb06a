/**
 * Browser wiring: canvas stack over the EditorState, controls, job gallery.
 *
 * Canvases render at the image's native resolution and scale with CSS, so
 * exports stay resolution-exact.
 */

import { JobStatus, ServiceClient } from "./api.js";
import { EditorState } from "./editor.js";

const POLL_MS = 1000;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

class App {
  editor = new EditorState();
  client = new ServiceClient("");
  baseCanvas = el<HTMLCanvasElement>("base-canvas");
  overlayCanvas = el<HTMLCanvasElement>("overlay-canvas");
  gallery = el<HTMLDivElement>("gallery");
  statusLine = el<HTMLDivElement>("status");
  submitButton = el<HTMLButtonElement>("submit");
  currentJob: JobStatus | null = null;
  polling = false;
  drawing = false;

  constructor() {
    this.bindControls()
    this.bindPointer();
    void this.refreshBundles();
  }

  // -- rendering ----------------------------------------------------------

  renderBase(): void {
    const base = this.editor.base;
    if (!base) return;
    this.baseCanvas.width = base.width;
    this.baseCanvas.height = base.height;
    this.overlayCanvas.width = base.width;
    this.overlayCanvas.height = base.height;
    const ctx = this.baseCanvas.getContext("2d")!;
    const rgba = new Uint8ClampedArray(base.width * base.height * 4);
    for (let i = 0; i < base.width * base.height; i++) {
      rgba[i * 4] = base.pixels[i * 3];
      rgba[i * 4 + 1] = base.pixels[i * 3 + 1];
      rgba[i * 4 + 2] = base.pixels[i * 3 + 2];
      rgba[i * 4 + 3] = 255;
    }
    ctx.putImageData(new ImageData(rgba, base.width, base.height), 0, 0);
    this.renderOverlay();
  }

  renderOverlay(): void {
    const { mask, sketch, base } = this.editor;
    if (!mask || !sketch || !base) return;
    const ctx = this.overlayCanvas.getContext("2d")!;
    const rgba = new Uint8ClampedArray(base.width * base.height * 4);
    for (let i = 0; i < mask.brushed.length; i++) {
      if (sketch.alpha[i]) {
        rgba[i * 4] = sketch.color[i * 3];
        rgba[i * 4 + 1] = sketch.color[i * 3 + 1];
        rgba[i * 4 + 2] = sketch.color[i * 3 + 2];
        rgba[i * 4 + 3] = 255;
      } else if (mask.brushed[i]) {
        rgba[i * 4] = 64;
        rgba[i * 4 + 1] = 160;
        rgba[i * 4 + 2] = 255;
        rgba[i * 4 + 3] = 140;
      }
    }
    ctx.putImageData(new ImageData(rgba, base.width, base.height), 0, 0);
  }

  status(text: string): void {
    this.statusLine.textContent = text;
  }

  // -- controls -----------------------------------------------------------

  bindControls(): void {
    el<HTMLInputElement>("file").addEventListener("change", async (event) => {
      const input = event.target as HTMLInputElement;
      const file = input.files?.[0];
      if (!file) return;
      const bytes = new Uint8Array(await file.arrayBuffer());
      await this.editor.loadBase(bytes);
      this.renderBase();
      this.status(`loaded ${file.name} (${this.editor.base!.width}px)`);
    });

    const radius = el<HTMLInputElement>("radius");
    radius.addEventListener("input", () => {
      this.editor.brush.radius = Number(radius.value);
    });
    for (const mode of ["mask", "erase", "sketch"] as const) {
      el<HTMLInputElement>(`mode-${mode}`).addEventListener("change", () => {
        this.editor.brush.mode = mode;
      });
    }
    const color = el<HTMLInputElement>("sketch-color");
    color.addEventListener("input", () => {
      const hex = color.value;
      this.editor.brush.color = [
        parseInt(hex.slice(1, 3), 16),
        parseInt(hex.slice(3, 5), 16),
        parseInt(hex.slice(5, 7), 16),
      ];
    });

    const fill = el<HTMLSelectElement>("fill");
    fill.addEventListener("change", () => {
      this.editor.params.fill = fill.value;
    });
    const cycles = el<HTMLInputElement>("cycles");
    cycles.addEventListener("input", () => {
      this.editor.params.cycles = Number(cycles.value);
    });
    const disc = el<HTMLInputElement>("use-disc");
    disc.addEventListener("change", () => {
      this.editor.params.useDiscriminator = disc.checked;
    });
    const refine = el<HTMLInputElement>("refine");
    refine.addEventListener("change", () => {
      this.editor.params.refine = refine.checked;
    });
    el<HTMLButtonElement>("clear").addEventListener("click", () => {
      this.editor.clearLayers();
      this.renderOverlay();
    });
    this.submitButton.addEventListener("click", () => void this.submit());
  }

  bindPointer(): void {
    const canvas = this.overlayCanvas;
    const toImage = (event: PointerEvent): [number, number] => {
      const rect = canvas.getBoundingClientRect();
      return [
        ((event.clientX - rect.left) / rect.width) * canvas.width,
        ((event.clientY - rect.top) / rect.height) * canvas.height,
      ];
    };
    canvas.addEventListener("pointerdown", (event) => {
      if (!this.editor.loaded) return;
      this.drawing = true;
      canvas.setPointerCapture(event.pointerId);
      const [x, y] = toImage(event);
      this.editor.beginStroke(x, y);
      this.renderOverlay();
    });
    canvas.addEventListener("pointermove", (event) => {
      if (!this.drawing) return;
      const [x, y] = toImage(event);
      this.editor.continueStroke(x, y);
      this.renderOverlay();
    });
    const stop = () => {
      this.drawing = false;
      this.editor.endStroke();
    };
    canvas.addEventListener("pointerup", stop);
    canvas.addEventListener("pointercancel", stop);
  }

  async refreshBundles(): Promise<void> {
    try {
      const bundles = await this.client.listBundles();
      const select = el<HTMLSelectElement>("bundle");
      select.innerHTML = "";
      for (const bundle of bundles) {
        const option = document.createElement("option");
        option.value = bundle.name;
        option.textContent = `${bundle.name} (${bundle.resolution ?? "?"}px)` +
          (bundle.loaded ? " [loaded]" : "");
        select.appendChild(option);
      }
      el<HTMLButtonElement>("load-bundle").onclick = async () => {
        await this.client.loadBundle(select.value);
        this.status(`loaded bundle ${select.value}`);
        void this.refreshBundles();
      };
    } catch (error) {
      this.status(`bundle list failed: ${error}`);
    }
  }

  // -- job workflow ---------------------------------------------------------

  async submit(): Promise<void> {
    if (this.polling) return; // one in-flight job at a time
    try {
      this.polling = true;
      this.submitButton.disabled = true;
      this.status("submitting...");
      const jobId = await this.editor.submit(this.client);
      this.status(`job ${jobId} queued`);
      const status = await this.client.pollUntilDone(jobId, {
        intervalMs: POLL_MS,
        onUpdate: (s) => {
          this.status(`job ${jobId}: ${s.state}, ${s.progress}/${s.cycles} cycles`);
        },
      });
      this.currentJob = status;
      if (status.state === "failed") {
        this.status(`job failed: ${status.error}`);
      } else {
        this.status(`job ${jobId} done`);
        await this.renderGallery(status);
      }
    } catch (error) {
      this.status(`submit failed: ${error}`);
    } finally {
      this.polling = false;
      this.submitButton.disabled = false;
    }
  }

  async renderGallery(job: JobStatus): Promise<void> {
    this.gallery.innerHTML = "";
    if (!job.urls) return;
    const addPane = async (label: string, url: string, highlight: boolean,
                           pick: number | "coarse" | "refined") => {
      const pane = document.createElement("figure");
      pane.className = "pane" + (highlight ? " selected" : "");
      const img = document.createElement("img");
      const bytes = await this.client.fetchArtifact(url);
      img.src = URL.createObjectURL(new Blob([new Uint8Array(bytes)], { type: "image/png" }));
      const caption = document.createElement("figcaption");
      caption.textContent = label;
      const use = document.createElement("button");
      use.textContent = "edit this";
      use.onclick = async () => {
        await this.editor.iterateFromResult(this.client, job, pick);
        this.renderBase();
        this.status(`editing from ${label}`);
      };
      pane.append(img, caption, use);
      this.gallery.appendChild(pane);
    };
    for (let i = 0; i < job.urls.cycles.length; i++) {
      const score = job.scores?.[i];
      const label = score !== undefined
        ? `cycle ${i}: ${score.toFixed(3)}`
        : `cycle ${i}`;
      await addPane(label, job.urls.cycles[i], job.selected_cycle === i, i);
    }
    await addPane("coarse", job.urls.coarse, false, "coarse");
    if (job.urls.refined) {
      await addPane("refined", job.urls.refined, false, "refined");
    }
  }
}

window.addEventListener("DOMContentLoaded", () => {
  new App();
});
