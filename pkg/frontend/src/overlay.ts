/**
 * Pixel math for the attention overlay and mask tint: nearest-neighbor
 * upsampling of the low-res attention grid plus a fixed color ramp. Pure
 * functions over typed arrays so the compositing itself stays testable.
 */

/** Blue -> cyan -> yellow -> red ramp, t in [0, 1]. */
export function heatColor(t: number): [number, number, number] {
  const x = Math.min(1, Math.max(0, t));
  if (x < 1 / 3) {
    const u = x * 3;
    return [0, Math.round(255 * u), 255];
  }
  if (x < 2 / 3) {
    const u = (x - 1 / 3) * 3;
    return [Math.round(255 * u), 255, Math.round(255 * (1 - u))];
  }
  const u = (x - 2 / 3) * 3;
  return [255, Math.round(255 * (1 - u)), 0];
}

/** Nearest-neighbor upsample of a u x v grid to target dims, row-major. */
export function upsampleGrid(grid: number[][], width: number, height: number): Float64Array {
  const rows = grid.length;
  const cols = grid[0]?.length ?? 0;
  if (rows === 0 || cols === 0) {
    throw new Error('attention grid is empty');
  }
  const out = new Float64Array(width * height);
  for (let y = 0; y < height; y++) {
    const gy = Math.min(rows - 1, Math.floor((y * rows) / height));
    const row = grid[gy]!;
    for (let x = 0; x < width; x++) {
      const gx = Math.min(cols - 1, Math.floor((x * cols) / width));
      out[y * width + x] = row[gx]!;
    }
  }
  return out;
}

/**
 * RGBA heatmap for the overlay canvas. Alpha scales with both the attention
 * value and the user's opacity slider so weak regions stay see-through.
 */
export function heatRgba(
  grid: number[][],
  width: number,
  height: number,
  opacity: number,
): Uint8ClampedArray<ArrayBuffer> {
  const up = upsampleGrid(grid, width, height);
  const rgba = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < up.length; i++) {
    const v = up[i]!;
    const [r, g, b] = heatColor(v);
    rgba[i * 4] = r;
    rgba[i * 4 + 1] = g;
    rgba[i * 4 + 2] = b;
    rgba[i * 4 + 3] = Math.round(255 * Math.min(1, Math.max(0, v * opacity)));
  }
  return rgba;
}

/** Flat green tint for mask pixels, transparent elsewhere. */
export function maskRgba(
  pixels: Uint8Array,
  width: number,
  height: number,
  alpha = 0.45,
): Uint8ClampedArray<ArrayBuffer> {
  if (pixels.length !== width * height) {
    throw new Error('pixel buffer does not match dims');
  }
  const rgba = new Uint8ClampedArray(width * height * 4);
  const a = Math.round(255 * Math.min(1, Math.max(0, alpha)));
  for (let i = 0; i < pixels.length; i++) {
    if (!pixels[i]) continue;
    rgba[i * 4] = 46;
    rgba[i * 4 + 1] = 204;
    rgba[i * 4 + 2] = 113;
    rgba[i * 4 + 3] = a;
  }
  return rgba;
}

/**
 * Threshold the upsampled attention at tau; feeds the one-click mask seed.
 * The result is provenance-tagged by the caller, never auto-submitted.
 */
export function binarizeAttention(
  grid: number[][],
  width: number,
  height: number,
  tau = 0.5,
): Uint8Array {
  const up = upsampleGrid(grid, width, height);
  const out = new Uint8Array(width * height);
  for (let i = 0; i < up.length; i++) {
    out[i] = up[i]! >= tau ? 1 : 0;
  }
  return out;
}
