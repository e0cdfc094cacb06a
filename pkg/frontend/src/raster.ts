/**
 * Pixel-level editing model shared by the browser UI and the tests.
 *
 * The mask layer is a binary buffer (1 = brushed = hole); its export is a
 * pure 0/255 grayscale bitmap with no antialiasing, 0 where brushed, matching
 * the server's >= 128 threshold contract exactly. The sketch layer holds RGB
 * color plus alpha and only ever carries paint inside the mask's hole.
 */

export class MaskLayer {
  readonly width: number;
  readonly height: number;
  /** 1 where brushed (hole), 0 where untouched (known). */
  readonly brushed: Uint8Array;

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
    this.brushed = new Uint8Array(width * height);
  }

  clear(): void {
    this.brushed.fill(0);
  }

  /** Stamp a hard-edged disk; erase=true restores the known region. */
  stampDisk(cx: number, cy: number, radius: number, erase = false): void {
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    const value = erase ? 0 : 1;
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        if (dx * dx + dy * dy <= r2) {
          this.brushed[y * this.width + x] = value;
        }
      }
    }
  }

  /** Stamp disks along a segment so strokes are gap-free. */
  stampSegment(x0: number, y0: number, x1: number, y1: number, radius: number,
               erase = false): void {
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const steps = Math.max(1, Math.ceil(dist / Math.max(1, radius / 2)));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.stampDisk(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius, erase);
    }
  }

  holeCount(): number {
    let n = 0;
    for (const v of this.brushed) n += v;
    return n;
  }

  /** 0/255 bitmap, 0 where brushed: the wire format the service decodes. */
  exportBitmap(): Uint8Array {
    const out = new Uint8Array(this.brushed.length);
    for (let i = 0; i < out.length; i++) {
      out[i] = this.brushed[i] ? 0 : 255;
    }
    return out;
  }

  /** Inverse of exportBitmap for re-importing a served mask.png. */
  static fromBitmap(bitmap: Uint8Array, width: number, height: number): MaskLayer {
    const layer = new MaskLayer(width, height);
    for (let i = 0; i < bitmap.length; i++) {
      layer.brushed[i] = bitmap[i] >= 128 ? 0 : 1;
    }
    return layer;
  }
}

export type Rgb = [number, number, number];

export class SketchLayer {
  readonly width: number;
  readonly height: number;
  /** RGB bytes per pixel. */
  readonly color: Uint8Array;
  /** Alpha byte per pixel; 0 everywhere outside the mask's hole. */
  readonly alpha: Uint8Array;

  constructor(width: number, height: number) {
    this.width = width;
    this.height = height;
    this.color = new Uint8Array(width * height * 3);
    this.alpha = new Uint8Array(width * height);
  }

  clear(): void {
    this.color.fill(0);
    this.alpha.fill(0);
  }

  /** Stamp a colored disk, clipped to the mask's hole. */
  stampDisk(cx: number, cy: number, radius: number, color: Rgb,
            mask: MaskLayer): void {
    const r2 = radius * radius;
    const x0 = Math.max(0, Math.floor(cx - radius));
    const x1 = Math.min(this.width - 1, Math.ceil(cx + radius));
    const y0 = Math.max(0, Math.floor(cy - radius));
    const y1 = Math.min(this.height - 1, Math.ceil(cy + radius));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - cx;
        const dy = y - cy;
        const i = y * this.width + x;
        if (dx * dx + dy * dy <= r2 && mask.brushed[i]) {
          this.alpha[i] = 255;
          this.color[i * 3] = color[0];
          this.color[i * 3 + 1] = color[1];
          this.color[i * 3 + 2] = color[2];
        }
      }
    }
  }

  stampSegment(x0: number, y0: number, x1: number, y1: number, radius: number,
               color: Rgb, mask: MaskLayer): void {
    const dist = Math.hypot(x1 - x0, y1 - y0);
    const steps = Math.max(1, Math.ceil(dist / Math.max(1, radius / 2)));
    for (let i = 0; i <= steps; i++) {
      const t = i / steps;
      this.stampDisk(x0 + (x1 - x0) * t, y0 + (y1 - y0) * t, radius, color, mask);
    }
  }

  /** Drop any paint that no longer sits inside the hole (after mask erases). */
  clipToHole(mask: MaskLayer): void {
    for (let i = 0; i < this.alpha.length; i++) {
      if (!mask.brushed[i] && this.alpha[i]) {
        this.alpha[i] = 0;
        this.color[i * 3] = 0;
        this.color[i * 3 + 1] = 0;
        this.color[i * 3 + 2] = 0;
      }
    }
  }

  hasPaint(): boolean {
    return this.alpha.some((a) => a > 0);
  }

  /** RGBA buffer for the sketch.png upload. */
  exportRgba(): Uint8Array {
    const out = new Uint8Array(this.width * this.height * 4);
    for (let i = 0; i < this.alpha.length; i++) {
      out[i * 4] = this.color[i * 3];
      out[i * 4 + 1] = this.color[i * 3 + 1];
      out[i * 4 + 2] = this.color[i * 3 + 2];
      out[i * 4 + 3] = this.alpha[i];
    }
    return out;
  }
}
