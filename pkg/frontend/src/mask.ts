/**
 * In-memory binary mask being authored for one instance. Holds the pixel
 * buffer, the undo history, and the dirty flag the navigation guard checks.
 * Rendering is someone else's job; everything here is plain array math so it
 * can be tested without a DOM.
 */

import { encodeMaskRle, decodeMaskRle } from './codec.js';

export interface Point {
  x: number;
  y: number;
}

const UNDO_DEPTH = 50;

export class MaskBuffer {
  readonly width: number;
  readonly height: number;
  private pixels: Uint8Array;
  private undoStack: Uint8Array[] = [];
  private dirty = false;

  constructor(width: number, height: number, initial?: Uint8Array) {
    if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
      throw new Error('mask dims must be positive integers');
    }
    this.width = width;
    this.height = height;
    if (initial !== undefined) {
      if (initial.length !== width * height) {
        throw new Error('initial buffer does not match mask dims');
      }
      this.pixels = Uint8Array.from(initial, (v) => (v ? 1 : 0));
    } else {
      this.pixels = new Uint8Array(width * height);
    }
  }

  static fromRle(encoded: readonly number[]): MaskBuffer {
    const { width, height, pixels } = decodeMaskRle(encoded);
    return new MaskBuffer(width, height, pixels);
  }

  get isDirty(): boolean {
    return this.dirty;
  }

  markSaved(): void {
    this.dirty = false;
  }

  get(x: number, y: number): boolean {
    return this.inBounds(x, y) ? this.pixels[y * this.width + x] === 1 : false;
  }

  snapshot(): Uint8Array {
    return this.pixels.slice();
  }

  countSet(): number {
    let n = 0;
    for (let i = 0; i < this.pixels.length; i++) n += this.pixels[i]!;
    return n;
  }

  encode(): number[] {
    return encodeMaskRle(this.pixels, this.width, this.height);
  }

  /** Call once at the start of each user gesture so undo works per stroke. */
  beginStroke(): void {
    this.undoStack.push(this.pixels.slice());
    if (this.undoStack.length > UNDO_DEPTH) {
      this.undoStack.shift();
    }
  }

  undo(): boolean {
    const prev = this.undoStack.pop();
    if (prev === undefined) {
      return false;
    }
    this.pixels = prev;
    this.dirty = true;
    return true;
  }

  get undoDepth(): number {
    return this.undoStack.length;
  }

  /** Circular stamp centered on a pixel; value=false erases. */
  stampBrush(cx: number, cy: number, radius: number, value: boolean): void {
    const r = Math.max(0, radius);
    const lo = Math.ceil(-r);
    const hi = Math.floor(r);
    const fill = value ? 1 : 0;
    for (let dy = lo; dy <= hi; dy++) {
      for (let dx = lo; dx <= hi; dx++) {
        if (dx * dx + dy * dy > r * r) continue;
        const x = Math.round(cx) + dx;
        const y = Math.round(cy) + dy;
        if (this.inBounds(x, y)) {
          this.pixels[y * this.width + x] = fill;
        }
      }
    }
    this.dirty = true;
  }

  /** Even-odd scanline fill over pixel centers. Needs at least 3 vertices. */
  fillPolygon(points: readonly Point[], value: boolean): void {
    if (points.length < 3) {
      throw new Error('polygon needs at least 3 points');
    }
    const fill = value ? 1 : 0;
    for (let y = 0; y < this.height; y++) {
      const cy = y + 0.5;
      const crossings: number[] = [];
      for (let i = 0; i < points.length; i++) {
        const a = points[i]!;
        const b = points[(i + 1) % points.length]!;
        if (a.y <= cy === b.y <= cy) continue;
        crossings.push(a.x + ((cy - a.y) / (b.y - a.y)) * (b.x - a.x));
      }
      crossings.sort((p, q) => p - q);
      for (let k = 0; k + 1 < crossings.length; k += 2) {
        const x0 = Math.max(0, Math.ceil(crossings[k]! - 0.5));
        const x1 = Math.min(this.width - 1, Math.floor(crossings[k + 1]! - 0.5));
        for (let x = x0; x <= x1; x++) {
          this.pixels[y * this.width + x] = fill;
        }
      }
    }
    this.dirty = true;
  }

  clear(): void {
    this.pixels.fill(0);
    this.dirty = true;
  }

  /** Replace the whole buffer (used by "seed from attention"); undoable. */
  replaceWith(pixels: Uint8Array): void {
    if (pixels.length !== this.pixels.length) {
      throw new Error('replacement buffer does not match mask dims');
    }
    this.beginStroke();
    this.pixels = Uint8Array.from(pixels, (v) => (v ? 1 : 0));
    this.dirty = true;
  }

  private inBounds(x: number, y: number): boolean {
    return x >= 0 && y >= 0 && x < this.width && y < this.height;
  }
}
