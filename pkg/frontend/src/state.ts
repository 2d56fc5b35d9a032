/**
 * Session state: the loaded image, the last response, overlay toggles,
 * and a replayable history of prompt/response pairs.
 */

import { OverlayToggles } from "./overlay.js";
import { PromptRequest, QuadrupletResponse } from "./types.js";

export interface LoadedImage {
  b64: string;
  width: number;
  height: number;
  name: string;
}

export interface HistoryEntry {
  request: PromptRequest;
  response: QuadrupletResponse;
}

export class SessionState {
  image: LoadedImage | null = null;
  lastResponse: QuadrupletResponse | null = null;
  toggles: OverlayToggles = { union: true, intersection: true, boxes: true };
  history: HistoryEntry[] = [];

  get ready(): boolean {
    return this.image !== null;
  }

  loadImage(image: LoadedImage): void {
    this.image = image;
    this.lastResponse = null;
    this.history = [];
  }

  record(request: PromptRequest, response: QuadrupletResponse): void {
    // overlays only render masks whose grid matches the current image
    const [h, w] = response.model.image;
    if (this.image && (this.image.width !== w || this.image.height !== h)) {
      throw new Error("response image size does not match the loaded image");
    }
    this.lastResponse = response;
    this.history.push({ request, response });
  }

  replay(index: number): HistoryEntry {
    const entry = this.history[index];
    if (!entry) throw new Error(`no history entry ${index}`);
    this.lastResponse = entry.response;
    return entry;
  }
}
