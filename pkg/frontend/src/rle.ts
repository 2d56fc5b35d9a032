/**
 * COCO-style run-length codec: column-major runs starting with a 0-run.
 * Mirrors the service's canonical form so decode(encode(m)) is an identity
 * and re-encoding a decoded mask is byte-identical.
 */

import { RleMask } from "./types.js";

/** Decode to a row-major uint8 grid of shape [height * width]. */
export function rleDecode(rle: RleMask): Uint8Array {
  const [h, w] = rle.size;
  const out = new Uint8Array(h * w);
  let pos = 0;
  let value = 0;
  for (const count of rle.counts) {
    if (value === 1) {
      for (let k = 0; k < count; k++) {
        const r = (pos + k) % h;
        const c = Math.floor((pos + k) / h);
        out[r * w + c] = 1;
      }
    }
    pos += count;
    value ^= 1;
  }
  if (pos !== h * w) throw new Error("run lengths do not cover the mask");
  return out;
}

/** Encode a row-major grid back to canonical RLE. */
export function rleEncode(mask: Uint8Array, height: number, width: number): RleMask {
  const counts: number[] = [];
  if (height * width === 0) return { size: [height, width], counts };
  let run = 0;
  let value = 0;
  for (let i = 0; i < height * width; i++) {
    const c = Math.floor(i / height);
    const r = i % height;
    const bit = mask[r * width + c] ? 1 : 0;
    if (bit === value) {
      run += 1;
    } else {
      counts.push(run);
      value = bit;
      run = 1;
    }
  }
  counts.push(run);
  return { size: [height, width], counts };
}
