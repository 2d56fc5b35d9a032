/**
 * End-to-end wiring check against a live service.
 *
 * Loads the demo assets (PNG + click point emitted by the training side),
 * simulates the click-the-object flow through the real client, and
 * verifies: exactly one /v1/prompt/visual call, a schema-valid response,
 * an RLE that decodes to the advertised grid and re-encodes
 * byte-identically, and a nearest-neighbor upsample that is pixel-aligned
 * with the image (every mask cell covers one exact scale x scale block).
 *
 * Usage: node dist/e2e/run_e2e.js <base-url> <assets-dir>
 */

import { readFileSync } from "node:fs";
import { join } from "node:path";

import { ApiClient } from "../src/api.js";
import { upsampleNearest } from "../src/overlay.js";
import { buildVisualRequest } from "../src/prompts.js";
import { rleDecode, rleEncode } from "../src/rle.js";
import { SessionState } from "../src/state.js";

function assert(cond: boolean, message: string): void {
  if (!cond) {
    console.error(`E2E FAIL: ${message}`);
    process.exit(1);
  }
}

async function main(): Promise<void> {
  const [baseUrl, assetsDir] = process.argv.slice(2);
  assert(Boolean(baseUrl && assetsDir), "usage: run_e2e.js <base-url> <assets-dir>");

  const meta = JSON.parse(readFileSync(join(assetsDir, "demo.json"), "utf-8")) as {
    image: string;
    width: number;
    height: number;
    click: [number, number];
  };
  const imageB64 = readFileSync(join(assetsDir, meta.image)).toString("base64");

  const client = new ApiClient(baseUrl);
  assert(await client.health(), `service at ${baseUrl} is not healthy`);

  const state = new SessionState();
  state.loadImage({ b64: imageB64, width: meta.width, height: meta.height, name: meta.image });

  // the canvas click on the scripted object
  const request = buildVisualRequest(imageB64, [meta.click]);
  const response = await client.promptVisual(request);
  state.record(request, response);

  assert(client.requestCount === 1, `expected exactly 1 request, saw ${client.requestCount}`);
  assert(response.quadruplets.length === 1, "visual prompt must return one quadruplet");

  const [gridH, gridW] = response.model.grid;
  const [imageH, imageW] = response.model.image;
  assert(imageH === meta.height && imageW === meta.width, "image size mismatch");
  assert(
    response.model.mask_scale === imageH / gridH,
    "mask scale must match image/grid ratio",
  );

  const quad = response.quadruplets[0];
  const mask = rleDecode(quad.union_mask);
  assert(mask.length === gridH * gridW, "mask decodes to the advertised grid size");
  assert(
    JSON.stringify(rleEncode(mask, gridH, gridW)) === JSON.stringify(quad.union_mask),
    "re-encoding the decoded mask must be byte-identical",
  );

  // nearest-neighbor upsample: each cell maps to an exact scale x scale block
  const up = upsampleNearest(mask, gridH, gridW, imageH, imageW);
  const scale = imageH / gridH;
  for (let gy = 0; gy < gridH; gy++) {
    for (let gx = 0; gx < gridW; gx++) {
      const want = mask[gy * gridW + gx];
      for (let dy = 0; dy < scale; dy++) {
        for (let dx = 0; dx < scale; dx++) {
          const y = gy * scale + dy;
          const x = gx * scale + dx;
          assert(
            up[y * imageW + x] === want,
            `upsample not block-aligned at pixel (${x}, ${y})`,
          );
        }
      }
    }
  }

  // overlay toggles and history replay work off the recorded response
  state.toggles = { union: true, intersection: false, boxes: true };
  assert(state.replay(0).response === response, "history replay returns the response");

  // determinism: the same click yields byte-identical quadruplets
  const again = await client.promptVisual(buildVisualRequest(imageB64, [meta.click]));
  assert(
    JSON.stringify(again) === JSON.stringify(response),
    "identical requests must produce identical bodies",
  );
  assert(client.requestCount === 2, "second call counted");

  console.log(
    `E2E PASS: one visual call, schema-valid response, RLE round-trip ok, ` +
      `mask ${gridH}x${gridW} pixel-aligned at scale ${scale}, ` +
      `verb=${quad.verb.name} object=${quad.object_class.name} score=${quad.score.toFixed(3)}`,
  );
}

main().catch((err) => {
  console.error(`E2E FAIL: ${err?.stack ?? err}`);
  process.exit(1);
});
