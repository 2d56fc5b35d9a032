/**
 * Browser wiring: upload an image, click or drag to prompt visually, type
 * a phrase for text prompts, toggle union/intersection/box overlays, and
 * replay earlier prompts. All inference happens server-side.
 */

import { ApiClient, ApiError } from "./api.js";
import {
  OverlayToggles,
  captionFor,
  renderOverlay,
} from "./overlay.js";
import { buildTextRequest, buildVisualRequest, downsampleStroke, Point } from "./prompts.js";
import { rleDecode } from "./rle.js";
import { SessionState } from "./state.js";
import { QuadrupletRecord, QuadrupletResponse, SchemaError } from "./types.js";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const state = new SessionState();
let client = new ApiClient(($("base-url") as HTMLInputElement).value || "");
let baseRgba: Uint8ClampedArray | null = null;
let stroke: Point[] = [];
let dragging = false;

const canvas = $("view") as HTMLCanvasElement;
const ctx = canvas.getContext("2d")!;

function setStatus(text: string, isError = false): void {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "error" : "";
}

function toggles(): OverlayToggles {
  return {
    union: ($("toggle-union") as HTMLInputElement).checked,
    intersection: ($("toggle-intersection") as HTMLInputElement).checked,
    boxes: ($("toggle-boxes") as HTMLInputElement).checked,
  };
}

function redraw(): void {
  if (!state.image || !baseRgba) return;
  const { width, height } = state.image;
  let rgba: Uint8ClampedArray = new Uint8ClampedArray(baseRgba);
  const res = state.lastResponse;
  const captions: string[] = [];
  if (res) {
    const [gridH, gridW] = res.model.grid;
    for (const quad of res.quadruplets) {
      try {
        rgba = renderOverlay(
          {
            baseRgba: rgba,
            imageW: width,
            imageH: height,
            gridH,
            gridW,
            unionMask: rleDecode(quad.union_mask),
            intersectionMask: quad.intersection_mask
              ? rleDecode(quad.intersection_mask)
              : null,
            humanBox: quad.human_box,
            objectBox: quad.object_box,
          },
          toggles(),
        );
      } catch (err) {
        setStatus(`render failed: ${(err as Error).message}`, true);
        return;
      }
      captions.push(
        captionFor(
          quad.verb.name,
          quad.verb.id,
          quad.object_class.name,
          quad.object_class.id,
          quad.score,
        ),
      );
    }
  }
  ctx.putImageData(new ImageData(new Uint8ClampedArray(rgba), width, height), 0, 0);
  $("captions").textContent = captions.join("  |  ");
}

function recordAndDraw(request: Parameters<SessionState["record"]>[0], response: QuadrupletResponse): void {
  state.record(request, response);
  const item = document.createElement("li");
  const index = state.history.length - 1;
  item.textContent = `#${index} ${request.kind}${request.text ? `: ${request.text}` : ""}`;
  item.onclick = () => {
    state.replay(index);
    redraw();
  };
  $("history").appendChild(item);
  redraw();
}

async function issue(kind: "visual" | "text" | "detect", payload?: Point[] | string): Promise<void> {
  if (!state.image) return;
  try {
    setStatus("querying…");
    let request;
    let response: QuadrupletResponse;
    if (kind === "visual") {
      request = buildVisualRequest(state.image.b64, payload as Point[]);
      response = await client.promptVisual(request);
    } else if (kind === "text") {
      request = buildTextRequest(state.image.b64, payload as string);
      response = await client.promptText(request);
    } else {
      request = { image_b64: state.image.b64, kind: "detect" as const, top_k: 10 };
      response = await client.detect(request);
    }
    recordAndDraw(request, response);
    setStatus(`ok (${response.quadruplets.length} quadruplets)`);
  } catch (err) {
    if ((err as Error).name === "AbortError") return;
    if (err instanceof ApiError) setStatus(`service error ${err.status}: ${err.message}`, true);
    else if (err instanceof SchemaError) setStatus(`schema mismatch: ${err.message}`, true);
    else setStatus(`request failed: ${(err as Error).message}`, true);
  }
}

function canvasPoint(ev: MouseEvent): Point {
  const rect = canvas.getBoundingClientRect();
  const x = ((ev.clientX - rect.left) / rect.width) * canvas.width;
  const y = ((ev.clientY - rect.top) / rect.height) * canvas.height;
  return [Math.max(0, Math.min(canvas.width - 1, x)), Math.max(0, Math.min(canvas.height - 1, y))];
}

function wire(): void {
  ($("base-url") as HTMLInputElement).onchange = (ev) => {
    client = new ApiClient((ev.target as HTMLInputElement).value);
  };

  ($("file") as HTMLInputElement).onchange = async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const dataUrl: string = await new Promise((resolve, reject) => {
      const reader = new FileReader();
      reader.onload = () => resolve(reader.result as string);
      reader.onerror = reject;
      reader.readAsDataURL(file);
    });
    const img = new Image();
    await new Promise((resolve, reject) => {
      img.onload = resolve;
      img.onerror = reject;
      img.src = dataUrl;
    });
    canvas.width = img.width;
    canvas.height = img.height;
    ctx.drawImage(img, 0, 0);
    baseRgba = new Uint8ClampedArray(ctx.getImageData(0, 0, img.width, img.height).data);
    state.loadImage({
      b64: dataUrl.split(",", 2)[1],
      width: img.width,
      height: img.height,
      name: file.name,
    });
    $("history").innerHTML = "";
    $("captions").textContent = "";
    for (const id of ["send-text", "detect"]) {
      ($(id) as HTMLButtonElement).disabled = false;
    }
    setStatus(`loaded ${file.name} (${img.width}x${img.height})`);
    redraw();
  };

  canvas.onmousedown = (ev) => {
    if (!state.ready) return;
    dragging = true;
    stroke = [canvasPoint(ev)];
  };
  canvas.onmousemove = (ev) => {
    if (dragging) stroke.push(canvasPoint(ev));
  };
  canvas.onmouseup = () => {
    if (!dragging) return;
    dragging = false;
    void issue("visual", downsampleStroke(stroke));
  };

  ($("send-text") as HTMLButtonElement).onclick = () => {
    const text = ($("text-prompt") as HTMLInputElement).value;
    if (text.trim()) void issue("text", text);
  };
  ($("detect") as HTMLButtonElement).onclick = () => void issue("detect");
  for (const id of ["toggle-union", "toggle-intersection", "toggle-boxes"]) {
    ($(id) as HTMLInputElement).onchange = redraw;
  }
}

wire();
setStatus("load an image to begin");
