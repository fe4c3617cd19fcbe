/**
 * Deterministic source data for exports and probe inputs.
 *
 * A small LCG keeps everything reproducible without a native RNG; images
 * are blocky random "digits" (bar patterns), which is all the parity and
 * round-trip checks need.
 */

export class Lcg {
  private state: number;

  constructor(seed: number) {
    this.state = seed >>> 0;
  }

  next(): number {
    this.state = (Math.imul(this.state, 1664525) + 1013904223) >>> 0;
    return this.state / 0x100000000;
  }

  int(maxExclusive: number): number {
    return Math.floor(this.next() * maxExclusive);
  }
}

export interface ByteImages {
  count: number;
  height: number;
  width: number;
  channels: number;
  pixels: Uint8Array; // N*H*W*C row-major
  labels: Uint8Array; // N
}

/** Blocky bar-pattern images keyed by label; uint8, single channel. */
export function syntheticImages(count: number, seed = 0, size = 28): ByteImages {
  const rng = new Lcg(seed);
  const pixels = new Uint8Array(count * size * size);
  const labels = new Uint8Array(count);
  for (let n = 0; n < count; n++) {
    const label = rng.int(10);
    labels[n] = label;
    const base = n * size * size;
    const bar = 2 + (label % 5);
    const phase = rng.int(4);
    const intensity = 120 + rng.int(136);
    for (let r = 0; r < size; r++) {
      for (let c = 0; c < size; c++) {
        const on = label < 5 ? (r + phase) % (bar + 2) < bar : (c + phase) % (bar + 2) < bar;
        const noise = rng.int(24);
        pixels[base + r * size + c] = on ? Math.min(255, intensity + noise) : noise;
      }
    }
  }
  return { count, height: size, width: size, channels: 1, pixels, labels };
}

/** Quantize float pixels in [0, 1] to unsigned bytes (round half up). */
export function quantizeToBytes(values: Float32Array | number[]): Uint8Array {
  const out = new Uint8Array(values.length);
  for (let i = 0; i < values.length; i++) {
    const v = Math.round(values[i] * 255);
    out[i] = v < 0 ? 0 : v > 255 ? 255 : v;
  }
  return out;
}

export function isIntegerBytes(values: number[]): boolean {
  return values.every((v) => Number.isInteger(v) && v >= 0 && v <= 255);
}
