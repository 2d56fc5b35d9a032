/**
 * UI-flow logic without a DOM: load an image, click the object, verify
 * that exactly one visual-prompt call goes out and that the returned mask
 * renders pixel-aligned over the image; toggles and history replay reuse
 * the stored response deterministically.
 */

import { describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { renderOverlay } from "../src/overlay.js";
import { buildVisualRequest } from "../src/prompts.js";
import { rleDecode } from "../src/rle.js";
import { SessionState } from "../src/state.js";
import { fakeResponse, jsonResponse } from "./helpers.js";

function renderFromState(state: SessionState, base: Uint8ClampedArray) {
  const res = state.lastResponse!;
  const [gridH, gridW] = res.model.grid;
  const [imageH, imageW] = res.model.image;
  const quad = res.quadruplets[0];
  return renderOverlay(
    {
      baseRgba: base,
      imageW,
      imageH,
      gridH,
      gridW,
      unionMask: rleDecode(quad.union_mask),
      intersectionMask: quad.intersection_mask ? rleDecode(quad.intersection_mask) : null,
      humanBox: quad.human_box,
      objectBox: quad.object_box,
    },
    state.toggles,
  );
}

describe("click-to-overlay flow", () => {
  it("issues exactly one visual call and renders block-aligned masks", async () => {
    const state = new SessionState();
    state.loadImage({ b64: "imgdata", width: 8, height: 8, name: "scene.png" });

    const client = new ApiClient("http://svc", async (url) => {
      expect(url).toBe("http://svc/v1/prompt/visual");
      return jsonResponse(fakeResponse());
    });
    const request = buildVisualRequest(state.image!.b64, [[3, 2]]);
    const response = await client.promptVisual(request);
    state.record(request, response);
    expect(client.requestCount).toBe(1);

    const base = new Uint8ClampedArray(8 * 8 * 4).fill(10);
    state.toggles = { union: true, intersection: false, boxes: false };
    const out = renderFromState(state, base);

    // union mask row 0 = [1, 1] at grid 2x2 -> top half of the image tinted
    for (let y = 0; y < 8; y++) {
      for (let x = 0; x < 8; x++) {
        const tinted = out[(y * 8 + x) * 4] !== 10;
        expect(tinted).toBe(y < 4);
      }
    }
  });

  it("history replay reproduces the identical overlay", async () => {
    const state = new SessionState();
    state.loadImage({ b64: "imgdata", width: 8, height: 8, name: "scene.png" });
    const client = new ApiClient("http://svc", async () => jsonResponse(fakeResponse()));
    const request = buildVisualRequest(state.image!.b64, [[1, 1]]);
    state.record(request, await client.promptVisual(request));

    const base = new Uint8ClampedArray(8 * 8 * 4).fill(55);
    const first = renderFromState(state, base);
    state.replay(0);
    const replayed = renderFromState(state, base);
    expect(Array.from(replayed)).toEqual(Array.from(first));
  });

  it("rejects responses sized for a different image", async () => {
    const state = new SessionState();
    state.loadImage({ b64: "imgdata", width: 16, height: 16, name: "scene.png" });
    const client = new ApiClient("http://svc", async () => jsonResponse(fakeResponse()));
    const request = buildVisualRequest(state.image!.b64, [[1, 1]]);
    const response = await client.promptVisual(request);
    expect(() => state.record(request, response)).toThrow(/does not match/);
  });
});
