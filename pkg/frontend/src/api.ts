/**
 * Typed client for the inpainting service's HTTP API.
 */

export interface JobUrls {
  input: string;
  mask: string;
  coarse: string;
  refined?: string;
  cycles: string[];
}

export interface JobStatus {
  job_id: string;
  state: "queued" | "running" | "done" | "failed";
  progress: number;
  cycles: number;
  scores?: number[];
  selected_cycle?: number | null;
  urls?: JobUrls;
  error?: string;
}

export interface BundleInfo {
  name: string;
  resolution: number | null;
  loaded: boolean;
}

export interface JobSubmission {
  imagePng: Uint8Array;
  maskPng: Uint8Array;
  sketchPng?: Uint8Array | null;
  fill: string;
  constantColor?: string;
  noiseSigma?: number;
  cycles: number;
  useDiscriminator: boolean;
  refine: boolean;
  seed: number;
}

export class ServiceError extends Error {
  readonly status: number;
  readonly detail: unknown;

  constructor(status: number, detail: unknown) {
    super(`service error ${status}: ${JSON.stringify(detail)}`);
    this.status = status;
    this.detail = detail;
  }
}

export function toBlobPart(bytes: Uint8Array): Uint8Array<ArrayBuffer> {
  // Fresh copy pinned to a plain ArrayBuffer keeps Blob happy across runtimes.
  const copy = new Uint8Array(new ArrayBuffer(bytes.length));
  copy.set(bytes);
  return copy;
}

export class ServiceClient {
  readonly baseUrl: string;

  constructor(baseUrl: string) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
  }

  private async parse(resp: Response): Promise<any> {
    const body = await resp.json().catch(() => ({}));
    if (!resp.ok) {
      throw new ServiceError(resp.status, body.detail ?? body);
    }
    return body;
  }

  async submitJob(job: JobSubmission): Promise<string> {
    const form = new FormData();
    form.append("image", new Blob([toBlobPart(job.imagePng)], { type: "image/png" }), "image.png");
    form.append("mask", new Blob([toBlobPart(job.maskPng)], { type: "image/png" }), "mask.png");
    if (job.sketchPng) {
      form.append("sketch", new Blob([toBlobPart(job.sketchPng)], { type: "image/png" }), "sketch.png");
    }
    form.append("fill", job.fill);
    if (job.constantColor) form.append("constant_color", job.constantColor);
    if (job.noiseSigma !== undefined) form.append("noise_sigma", String(job.noiseSigma));
    form.append("cycles", String(job.cycles));
    form.append("use_discriminator", String(job.useDiscriminator));
    form.append("refine", String(job.refine));
    form.append("seed", String(job.seed));
    const resp = await fetch(`${this.baseUrl}/api/jobs`, { method: "POST", body: form });
    const body = await this.parse(resp);
    return body.job_id as string;
  }

  async getJob(jobId: string): Promise<JobStatus> {
    const resp = await fetch(`${this.baseUrl}/api/jobs/${jobId}`);
    return (await this.parse(resp)) as JobStatus;
  }

  /** Poll until the job settles; onUpdate fires for every observed status. */
  async pollUntilDone(
    jobId: string,
    opts: { intervalMs?: number; timeoutMs?: number; onUpdate?: (s: JobStatus) => void } = {},
  ): Promise<JobStatus> {
    const interval = opts.intervalMs ?? 1000;
    const deadline = Date.now() + (opts.timeoutMs ?? 120_000);
    for (;;) {
      const status = await this.getJob(jobId);
      opts.onUpdate?.(status);
      if (status.state === "done" || status.state === "failed") {
        return status;
      }
      if (Date.now() > deadline) {
        throw new Error(`job ${jobId} still ${status.state} after timeout`);
      }
      await new Promise((resolve) => setTimeout(resolve, interval));
    }
  }

  async fetchArtifact(url: string): Promise<Uint8Array> {
    const resp = await fetch(url.startsWith("http") ? url : `${this.baseUrl}${url}`);
    if (!resp.ok) {
      throw new ServiceError(resp.status, await resp.text());
    }
    return new Uint8Array(await resp.arrayBuffer());
  }

  async listBundles(): Promise<BundleInfo[]> {
    const resp = await fetch(`${this.baseUrl}/api/bundles`);
    const body = await this.parse(resp);
    return body.bundles as BundleInfo[];
  }

  async loadBundle(name: string): Promise<void> {
    const resp = await fetch(`${this.baseUrl}/api/bundles/${name}/load`, { method: "POST" });
    await this.parse(resp);
  }
}
