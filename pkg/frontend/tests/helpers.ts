import { QuadrupletResponse, RleMask } from "../src/types.js";
import { rleEncode } from "../src/rle.js";

export function maskRle(grid: number[][], h: number, w: number): RleMask {
  const flat = new Uint8Array(h * w);
  grid.forEach((row, r) => row.forEach((v, c) => (flat[r * w + c] = v)));
  return rleEncode(flat, h, w);
}

export function fakeResponse(gridH = 2, gridW = 2, imageH = 8, imageW = 8): QuadrupletResponse {
  return {
    model: {
      version: "0.1.0",
      checkpoint_hash: "f".repeat(64),
      mask_scale: imageH / gridH,
      grid: [gridH, gridW],
      image: [imageH, imageW],
    },
    quadruplets: [
      {
        human_box: [0.25, 0.5, 0.5, 0.9],
        object_box: [0.75, 0.4, 0.4, 0.3],
        object_class: { id: 1, name: "cup" },
        verb: { id: 0, name: "hold" },
        score: 0.91,
        union_mask: maskRle(
          [
            [1, 1],
            [0, 0],
          ],
          gridH,
          gridW,
        ),
        intersection_mask: null,
        query_index: 0,
      },
    ],
  };
}

export function jsonResponse(body: unknown, status = 200): Response {
  return new Response(JSON.stringify(body), {
    status,
    headers: { "Content-Type": "application/json" },
  });
}
