/**
 * Run-length codec for binary masks, shared with the annotation service.
 *
 * Wire format: `[width, height, run0, run1, ...]` where runs alternate
 * starting with the count of leading zero pixels (so run0 is 0 when the
 * first pixel is set), pixels in row-major order, and the run total must
 * cover the full grid. Every run after the first must be positive.
 */

export class CodecError extends Error {
  constructor(message: string) {
    super(message);
    this.name = 'CodecError';
  }
}

export interface DecodedMask {
  width: number;
  height: number;
  /** Row-major 0/1 bytes, length = width * height. */
  pixels: Uint8Array;
}

export function encodeMaskRle(pixels: Uint8Array, width: number, height: number): number[] {
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new CodecError('mask dims must be positive integers');
  }
  if (pixels.length !== width * height) {
    throw new CodecError(`pixel buffer length ${pixels.length} does not match ${width}x${height}`);
  }
  const runs: number[] = [];
  let current = 0;
  let count = 0;
  for (let i = 0; i < pixels.length; i++) {
    const value = pixels[i]! ? 1 : 0;
    if (value === current) {
      count += 1;
    } else {
      runs.push(count);
      current = value;
      count = 1;
    }
  }
  runs.push(count);
  return [width, height, ...runs];
}

export function decodeMaskRle(encoded: readonly number[]): DecodedMask {
  if (encoded.length < 3) {
    throw new CodecError('mask RLE too short');
  }
  const width = encoded[0]!;
  const height = encoded[1]!;
  const runs = encoded.slice(2);
  if (!Number.isInteger(width) || !Number.isInteger(height) || width < 1 || height < 1) {
    throw new CodecError('mask RLE has non-positive dims');
  }
  let total = 0;
  for (let i = 0; i < runs.length; i++) {
    const run = runs[i]!;
    if (!Number.isInteger(run) || run < 0) {
      throw new CodecError('mask RLE runs must be non-negative integers');
    }
    if (run === 0 && i > 0) {
      throw new CodecError('mask RLE has an empty run after the first');
    }
    total += run;
  }
  if (total !== width * height) {
    throw new CodecError('mask RLE runs do not cover the grid');
  }
  const pixels = new Uint8Array(width * height);
  let pos = 0;
  let value = 0;
  for (const run of runs) {
    if (value) {
      pixels.fill(1, pos, pos + run);
    }
    pos += run;
    value = value ? 0 : 1;
  }
  return { width, height, pixels };
}
