/**
 * Pure pixel helpers for overlay rendering.
 *
 * Masks arrive at feature resolution and are upsampled with nearest
 * neighbor so every mask cell maps to an exact pixel block; tints and box
 * outlines composite into plain RGBA buffers that the canvas layer blits
 * with putImageData.
 */

export interface Tint {
  r: number;
  g: number;
  b: number;
  alpha: number; // 0..1 blend factor over the base image
}

export const UNION_TINT: Tint = { r: 70, g: 160, b: 255, alpha: 0.45 };
export const INTERSECTION_TINT: Tint = { r: 255, g: 120, b: 40, alpha: 0.55 };
export const HUMAN_BOX_COLOR: [number, number, number] = [80, 255, 120];
export const OBJECT_BOX_COLOR: [number, number, number] = [255, 230, 70];

/** Nearest-neighbor upsample of a row-major grid to imageH x imageW. */
export function upsampleNearest(
  mask: Uint8Array,
  gridH: number,
  gridW: number,
  imageH: number,
  imageW: number,
): Uint8Array {
  const out = new Uint8Array(imageH * imageW);
  for (let y = 0; y < imageH; y++) {
    const gy = Math.min(Math.floor((y * gridH) / imageH), gridH - 1);
    for (let x = 0; x < imageW; x++) {
      const gx = Math.min(Math.floor((x * gridW) / imageW), gridW - 1);
      out[y * imageW + x] = mask[gy * gridW + gx];
    }
  }
  return out;
}

/** Alpha-blend a tint into `rgba` wherever the pixel mask is set. */
export function tintMask(
  rgba: Uint8ClampedArray,
  pixelMask: Uint8Array,
  width: number,
  tint: Tint,
): void {
  for (let i = 0; i < pixelMask.length; i++) {
    if (!pixelMask[i]) continue;
    const o = i * 4;
    rgba[o] = Math.round(rgba[o] * (1 - tint.alpha) + tint.r * tint.alpha);
    rgba[o + 1] = Math.round(rgba[o + 1] * (1 - tint.alpha) + tint.g * tint.alpha);
    rgba[o + 2] = Math.round(rgba[o + 2] * (1 - tint.alpha) + tint.b * tint.alpha);
  }
}

/** Normalized (cx, cy, w, h) box to integer pixel corners, clamped. */
export function boxToPixels(
  box: [number, number, number, number],
  imageW: number,
  imageH: number,
): { x0: number; y0: number; x1: number; y1: number } {
  const [cx, cy, w, h] = box;
  const clamp = (v: number, hi: number) => Math.min(Math.max(Math.round(v), 0), hi);
  return {
    x0: clamp((cx - w / 2) * imageW, imageW - 1),
    y0: clamp((cy - h / 2) * imageH, imageH - 1),
    x1: clamp((cx + w / 2) * imageW, imageW - 1),
    y1: clamp((cy + h / 2) * imageH, imageH - 1),
  };
}

/** Draw a 1px rectangle outline into the RGBA buffer. */
export function drawBoxOutline(
  rgba: Uint8ClampedArray,
  imageW: number,
  imageH: number,
  box: [number, number, number, number],
  color: [number, number, number],
): void {
  const { x0, y0, x1, y1 } = boxToPixels(box, imageW, imageH);
  const put = (x: number, y: number) => {
    const o = (y * imageW + x) * 4;
    rgba[o] = color[0];
    rgba[o + 1] = color[1];
    rgba[o + 2] = color[2];
    rgba[o + 3] = 255;
  };
  for (let x = x0; x <= x1; x++) {
    put(x, y0);
    put(x, y1);
  }
  for (let y = y0; y <= y1; y++) {
    put(x0, y);
    put(x1, y);
  }
}

export interface OverlayToggles {
  union: boolean;
  intersection: boolean;
  boxes: boolean;
}

export interface OverlayInput {
  baseRgba: Uint8ClampedArray; // premultiplied nothing, straight RGBA
  imageW: number;
  imageH: number;
  gridH: number;
  gridW: number;
  unionMask: Uint8Array | null; // feature-resolution grids
  intersectionMask: Uint8Array | null;
  humanBox: [number, number, number, number];
  objectBox: [number, number, number, number];
}

/**
 * Compose one quadruplet over a copy of the base image. The caption text
 * ("verb object score") is returned for the DOM layer to place.
 */
export function renderOverlay(
  input: OverlayInput,
  toggles: OverlayToggles,
): Uint8ClampedArray {
  const { imageW, imageH, gridH, gridW } = input;
  if (input.unionMask && input.unionMask.length !== gridH * gridW) {
    throw new Error("union mask size does not match the advertised grid");
  }
  if (input.intersectionMask && input.intersectionMask.length !== gridH * gridW) {
    throw new Error("intersection mask size does not match the advertised grid");
  }
  const out = new Uint8ClampedArray(input.baseRgba);
  if (toggles.union && input.unionMask) {
    tintMask(out, upsampleNearest(input.unionMask, gridH, gridW, imageH, imageW), imageW, UNION_TINT);
  }
  if (toggles.intersection && input.intersectionMask) {
    tintMask(
      out,
      upsampleNearest(input.intersectionMask, gridH, gridW, imageH, imageW),
      imageW,
      INTERSECTION_TINT,
    );
  }
  if (toggles.boxes) {
    drawBoxOutline(out, imageW, imageH, input.humanBox, HUMAN_BOX_COLOR);
    drawBoxOutline(out, imageW, imageH, input.objectBox, OBJECT_BOX_COLOR);
  }
  return out;
}

export function captionFor(
  verbName: string | undefined,
  verbId: number,
  objectName: string | undefined,
  objectId: number,
  score: number,
): string {
  const verb = verbName ?? `verb#${verbId}`;
  const object = objectName ?? `object#${objectId}`;
  return `${verb} ${object} ${score.toFixed(3)}`;
}
