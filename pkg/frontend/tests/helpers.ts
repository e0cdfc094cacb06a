/** Shared test helpers: spawning the real service, building tiny base images. */

import { ChildProcess, spawn } from "node:child_process";
import { mkdtempSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";

import { encodePng } from "../src/png.js";

export interface StubService {
  baseUrl: string;
  proc: ChildProcess;
  runsDir: string;
  stop: () => void;
}

export async function startService(port: number): Promise<StubService> {
  const runsDir = mkdtempSync(join(tmpdir(), "webui-runs-"));
  const script = new URL("./serve_stub.py", import.meta.url).pathname;
  const proc = spawn("python3", [script, String(port), runsDir], {
    stdio: ["ignore", "inherit", "inherit"],
  });
  const baseUrl = `http://127.0.0.1:${port}`;
  const deadline = Date.now() + 60_000;
  for (;;) {
    try {
      const resp = await fetch(`${baseUrl}/api/bundles`);
      if (resp.ok) break;
    } catch {
      // not up yet
    }
    if (Date.now() > deadline) {
      proc.kill();
      throw new Error("service did not come up");
    }
    await new Promise((resolve) => setTimeout(resolve, 250));
  }
  return { baseUrl, proc, runsDir, stop: () => proc.kill() };
}

/** Tiny RGB test card: gradient + block, encoded as PNG. */
export async function testCardPng(size: number, seed = 0): Promise<Uint8Array> {
  const pixels = new Uint8Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const i = (y * size + x) * 3;
      pixels[i] = (x * 255 / (size - 1)) & 0xff;
      pixels[i + 1] = (y * 255 / (size - 1)) & 0xff;
      pixels[i + 2] = (seed * 37 + 64) & 0xff;
    }
  }
  const block = Math.floor(size / 4);
  for (let y = block; y < 2 * block; y++) {
    for (let x = block; x < 2 * block; x++) {
      const i = (y * size + x) * 3;
      pixels[i] = 220;
      pixels[i + 1] = 40;
      pixels[i + 2] = 40;
    }
  }
  return encodePng(pixels, size, size, 3);
}
