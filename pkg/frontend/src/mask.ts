/**
 * Label raster editing state: the client-side mask the user paints on.
 *
 * The raster mirrors the render resolution exactly (no rescaling), so the
 * region sent to the edit endpoint is pixel-exact. Every mutating operation
 * pushes an undo snapshot; the stack depth is bounded.
 */

import { decodePalettedPng, encodePalettedPng } from "./png.js";

export interface Brush {
  label: number;
  radius: number;
}

export interface Stroke extends Brush {
  x: number;
  y: number;
}

export const MAX_UNDO = 64;

export class MaskRaster {
  readonly width: number;
  readonly height: number;
  readonly numGroups: number;
  data: Uint8Array;
  private undoStack: Uint8Array[] = [];

  constructor(width: number, height: number, numGroups: number, data?: Uint8Array) {
    this.width = width;
    this.height = height;
    this.numGroups = numGroups;
    if (data) {
      if (data.length !== width * height) {
        throw new Error("raster data does not match dimensions");
      }
      this.data = new Uint8Array(data);
    } else {
      this.data = new Uint8Array(width * height);
    }
  }

  private checkLabel(label: number): void {
    if (!Number.isInteger(label) || label < 0 || label >= this.numGroups) {
      throw new Error(`label ${label} outside [0, ${this.numGroups})`);
    }
  }

  private snapshot(): void {
    this.undoStack.push(new Uint8Array(this.data));
    if (this.undoStack.length > MAX_UNDO) {
      this.undoStack.shift();
    }
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Paint a filled disc; out-of-bounds strokes are rejected. */
  paint(stroke: Stroke): void {
    this.checkLabel(stroke.label);
    if (stroke.x < 0 || stroke.y < 0 || stroke.x >= this.width || stroke.y >= this.height) {
      throw new Error(`stroke (${stroke.x}, ${stroke.y}) outside canvas`);
    }
    this.snapshot();
    const r = Math.max(0, stroke.radius);
    const r2 = r * r;
    const y0 = Math.max(0, Math.floor(stroke.y - r));
    const y1 = Math.min(this.height - 1, Math.ceil(stroke.y + r));
    const x0 = Math.max(0, Math.floor(stroke.x - r));
    const x1 = Math.min(this.width - 1, Math.ceil(stroke.x + r));
    for (let y = y0; y <= y1; y++) {
      for (let x = x0; x <= x1; x++) {
        const dx = x - stroke.x;
        const dy = y - stroke.y;
        if (dx * dx + dy * dy <= r2) {
          this.data[y * this.width + x] = stroke.label;
        }
      }
    }
  }

  fill(label: number): void {
    this.checkLabel(label);
    this.snapshot();
    this.data.fill(label);
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (!prev) return false;
    this.data = prev;
    return true;
  }

  equals(other: MaskRaster): boolean {
    if (other.width !== this.width || other.height !== this.height) return false;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) return false;
    }
    return true;
  }

  /** Pixels whose labels differ; this is the edit region sent to the server. */
  diff(other: MaskRaster): { count: number; region: Uint8Array } {
    if (other.width !== this.width || other.height !== this.height) {
      throw new Error("raster dimensions differ");
    }
    const region = new Uint8Array(this.data.length);
    let count = 0;
    for (let i = 0; i < this.data.length; i++) {
      if (this.data[i] !== other.data[i]) {
        region[i] = 1;
        count++;
      }
    }
    return { count, region };
  }

  clone(): MaskRaster {
    return new MaskRaster(this.width, this.height, this.numGroups, this.data);
  }

  toPng(): Uint8Array {
    return encodePalettedPng(this.data, this.width, this.height);
  }

  static fromPng(bytes: Uint8Array, numGroups: number): MaskRaster {
    const decoded = decodePalettedPng(bytes);
    return new MaskRaster(decoded.width, decoded.height, numGroups, decoded.labels);
  }

  static fromLabels(labels: Uint8Array, width: number, height: number, numGroups: number): MaskRaster {
    return new MaskRaster(width, height, numGroups, labels);
  }
}
