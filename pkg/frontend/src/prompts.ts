/**
 * Prompt capture: clicks become single points, drags become strokes
 * downsampled to a bounded point list (endpoints preserved), text input
 * becomes a text request.
 */

import { PromptRequest, validateRequest } from "./types.js";

export const MAX_STROKE_POINTS = 64;

export type Point = [number, number];

/** Uniformly thin a stroke to at most `max` points, keeping both ends. */
export function downsampleStroke(points: Point[], max: number = MAX_STROKE_POINTS): Point[] {
  if (points.length <= max) return points.slice();
  const out: Point[] = [];
  const last = points.length - 1;
  for (let i = 0; i < max; i++) {
    const idx = Math.round((i * last) / (max - 1));
    out.push(points[idx]);
  }
  return out;
}

export function buildDetectRequest(imageB64: string, topK: number = 100): PromptRequest {
  return validateRequest({ image_b64: imageB64, kind: "detect", top_k: topK });
}

export function buildVisualRequest(imageB64: string, points: Point[]): PromptRequest {
  return validateRequest({
    image_b64: imageB64,
    kind: "visual",
    points: downsampleStroke(points),
  });
}

export function buildTextRequest(imageB64: string, text: string): PromptRequest {
  return validateRequest({ image_b64: imageB64, kind: "text", text });
}
