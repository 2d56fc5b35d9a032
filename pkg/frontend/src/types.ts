/**
 * Wire types for the quadruplet service plus hand-rolled validators.
 *
 * Every outgoing request and incoming response passes through a validator;
 * a failure produces a thrown SchemaError so nothing renders from a body
 * the client does not understand.
 */

export interface RleMask {
  size: [number, number]; // [height, width] at feature resolution
  counts: number[];
}

export interface PromptRequest {
  image_b64?: string;
  image_id?: string;
  kind: "detect" | "visual" | "text";
  points?: Array<[number, number]>;
  text?: string;
  top_k?: number;
}

export interface CategoryRef {
  id: number;
  name?: string;
}

export interface QuadrupletRecord {
  human_box: [number, number, number, number]; // normalized cx, cy, w, h
  object_box: [number, number, number, number];
  object_class: CategoryRef;
  verb: CategoryRef;
  score: number;
  union_mask: RleMask;
  intersection_mask: RleMask | null;
  query_index: number;
}

export interface ModelMeta {
  version: string;
  checkpoint_hash: string;
  mask_scale: number;
  grid: [number, number];
  image: [number, number];
}

export interface QuadrupletResponse {
  model: ModelMeta;
  quadruplets: QuadrupletRecord[];
}

export class SchemaError extends Error {}

function fail(path: string, want: string): never {
  throw new SchemaError(`${path}: expected ${want}`);
}

function checkNumber(v: unknown, path: string): number {
  if (typeof v !== "number" || !Number.isFinite(v)) fail(path, "finite number");
  return v;
}

function checkTuple4(v: unknown, path: string): [number, number, number, number] {
  if (!Array.isArray(v) || v.length !== 4) fail(path, "array of 4 numbers");
  v.forEach((x, i) => checkNumber(x, `${path}[${i}]`));
  return v as [number, number, number, number];
}

export function validateRle(v: unknown, path = "rle"): RleMask {
  if (typeof v !== "object" || v === null) fail(path, "object");
  const rle = v as Record<string, unknown>;
  if (!Array.isArray(rle.size) || rle.size.length !== 2) fail(`${path}.size`, "[h, w]");
  rle.size.forEach((x, i) => {
    if (!Number.isInteger(x) || (x as number) < 0) fail(`${path}.size[${i}]`, "non-negative int");
  });
  if (!Array.isArray(rle.counts)) fail(`${path}.counts`, "array");
  let total = 0;
  rle.counts.forEach((x, i) => {
    if (!Number.isInteger(x) || (x as number) < 0) fail(`${path}.counts[${i}]`, "non-negative int");
    total += x as number;
  });
  const [h, w] = rle.size as [number, number];
  if (total !== h * w) fail(`${path}.counts`, `runs covering ${h * w} cells`);
  return v as RleMask;
}

export function validateRequest(req: PromptRequest): PromptRequest {
  if (!req.image_b64 && !req.image_id) fail("request", "image_b64 or image_id");
  if (req.kind === "visual") {
    if (!req.points || req.points.length < 1) fail("request.points", "at least one point");
    req.points.forEach((p, i) => {
      if (!Array.isArray(p) || p.length !== 2) fail(`request.points[${i}]`, "[x, y]");
      checkNumber(p[0], `request.points[${i}][0]`);
      checkNumber(p[1], `request.points[${i}][1]`);
    });
  }
  if (req.kind === "text" && (!req.text || req.text.trim() === "")) {
    fail("request.text", "non-empty string");
  }
  if (req.top_k !== undefined && (!Number.isInteger(req.top_k) || req.top_k < 1)) {
    fail("request.top_k", "positive integer");
  }
  return req;
}

function validateCategory(v: unknown, path: string): CategoryRef {
  if (typeof v !== "object" || v === null) fail(path, "object");
  const c = v as Record<string, unknown>;
  if (!Number.isInteger(c.id)) fail(`${path}.id`, "integer");
  return v as CategoryRef;
}

export function validateResponse(v: unknown): QuadrupletResponse {
  if (typeof v !== "object" || v === null) fail("response", "object");
  const body = v as Record<string, unknown>;
  const model = body.model as Record<string, unknown>;
  if (typeof model !== "object" || model === null) fail("response.model", "object");
  checkNumber(model.mask_scale, "response.model.mask_scale");
  if (!Array.isArray(model.grid) || model.grid.length !== 2) fail("response.model.grid", "[h, w]");
  if (!Array.isArray(model.image) || model.image.length !== 2) fail("response.model.image", "[h, w]");
  if (!Array.isArray(body.quadruplets)) fail("response.quadruplets", "array");
  body.quadruplets.forEach((q, i) => {
    const path = `response.quadruplets[${i}]`;
    const rec = q as Record<string, unknown>;
    checkTuple4(rec.human_box, `${path}.human_box`);
    checkTuple4(rec.object_box, `${path}.object_box`);
    validateCategory(rec.object_class, `${path}.object_class`);
    validateCategory(rec.verb, `${path}.verb`);
    checkNumber(rec.score, `${path}.score`);
    validateRle(rec.union_mask, `${path}.union_mask`);
    if (rec.intersection_mask !== null) validateRle(rec.intersection_mask, `${path}.intersection_mask`);
    if (!Number.isInteger(rec.query_index)) fail(`${path}.query_index`, "integer");
  });
  return v as QuadrupletResponse;
}
