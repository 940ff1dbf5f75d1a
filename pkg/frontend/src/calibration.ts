// Calibration documents: parse, validate field by field, apply single edits,
// and export back to JSON text.
//
// Validation mirrors what the reduction server enforces, so the console can
// flag a bad field before the document ever leaves the browser.  Keys the
// console does not understand are carried through untouched: an edit plus an
// export changes exactly the edited field and nothing else.

export type JsonValue = string | number | boolean | null | JsonValue[] | JsonObject;
export type JsonObject = { [key: string]: JsonValue };

export interface FieldError {
  path: string;
  message: string;
}

const TOP_LEVEL_REQUIRED = [
  "geometry",
  "masks",
  "oversampling",
  "pixels_per_radial_element",
  "q_start",
  "q_stop",
  "wavelength",
  "directory",
  "threads",
];

const GEOMETRY_REQUIRED = [
  "beamcenter",
  "detector_distance",
  "image_size",
  "pixel_size",
  "tilt",
];

const TILT_REQUIRED = ["tilt_rotation", "tilt_angle"];

const MASK_FORMATS = ["auto", "fit2d", "grayscale"];

export function parseDocument(text: string): { doc: JsonObject | null; errors: FieldError[] } {
  let value: JsonValue;
  try {
    value = JSON.parse(text) as JsonValue;
  } catch (err) {
    return { doc: null, errors: [{ path: "", message: `not valid JSON: ${String(err)}` }] };
  }
  if (!isObject(value)) {
    return { doc: null, errors: [{ path: "", message: "top level must be a JSON object" }] };
  }
  return { doc: value, errors: validate(value) };
}

function isObject(value: JsonValue | undefined): value is JsonObject {
  return typeof value === "object" && value !== null && !Array.isArray(value);
}

function isFiniteNumber(value: JsonValue | undefined): value is number {
  return typeof value === "number" && Number.isFinite(value);
}

function isInteger(value: JsonValue | undefined): value is number {
  return typeof value === "number" && Number.isInteger(value);
}

function isPair(value: JsonValue | undefined): value is [JsonValue, JsonValue] {
  return Array.isArray(value) && value.length === 2;
}

export function validate(doc: JsonObject): FieldError[] {
  const errors: FieldError[] = [];
  const bad = (path: string, message: string) => errors.push({ path, message });

  for (const key of TOP_LEVEL_REQUIRED) {
    if (!(key in doc)) {
      bad(key, "required field is missing");
    }
  }

  const geometry = doc["geometry"];
  if ("geometry" in doc) {
    if (!isObject(geometry)) {
      bad("geometry", "must be an object");
    } else {
      for (const key of GEOMETRY_REQUIRED) {
        if (!(key in geometry)) {
          bad(`geometry.${key}`, "required field is missing");
        }
      }
      validateGeometry(geometry, bad);
    }
  }

  if ("masks" in doc) {
    validateMasks(doc["masks"], bad);
  }

  const oversampling = doc["oversampling"];
  if ("oversampling" in doc && (!isInteger(oversampling) || oversampling < 1)) {
    bad("oversampling", "must be an integer >= 1");
  }

  const ppre = doc["pixels_per_radial_element"];
  if ("pixels_per_radial_element" in doc && (!isFiniteNumber(ppre) || ppre <= 0)) {
    bad("pixels_per_radial_element", "must be a number > 0");
  }

  const qStart = doc["q_start"];
  const qStop = doc["q_stop"];
  if ("q_start" in doc && !isFiniteNumber(qStart)) {
    bad("q_start", "must be a finite number");
  }
  if ("q_stop" in doc && !isFiniteNumber(qStop)) {
    bad("q_stop", "must be a finite number");
  }
  if (isFiniteNumber(qStart) && isFiniteNumber(qStop) && qStart >= qStop) {
    bad("q_start", "must be less than q_stop");
  }

  const wavelength = doc["wavelength"];
  if ("wavelength" in doc && (!isFiniteNumber(wavelength) || wavelength <= 0)) {
    bad("wavelength", "must be a number > 0");
  }

  const directory = doc["directory"];
  if ("directory" in doc && (typeof directory !== "string" || directory.length === 0)) {
    bad("directory", "must be a non-empty string");
  }

  const threads = doc["threads"];
  if ("threads" in doc && (!isInteger(threads) || threads < 1)) {
    bad("threads", "must be an integer >= 1");
  }

  if ("slices" in doc) {
    validateSlices(doc["slices"], doc, bad);
  }

  return errors;
}

function validateGeometry(geometry: JsonObject, bad: (path: string, message: string) => void): void {
  const beamcenter = geometry["beamcenter"];
  if ("beamcenter" in geometry) {
    if (!isPair(beamcenter) || !beamcenter.every(isFiniteNumber)) {
      bad("geometry.beamcenter", "must be a pair of numbers [vertical, horizontal]");
    }
  }

  const distance = geometry["detector_distance"];
  if ("detector_distance" in geometry && (!isFiniteNumber(distance) || distance <= 0)) {
    bad("geometry.detector_distance", "must be a number > 0");
  }

  const imageSize = geometry["image_size"];
  if ("image_size" in geometry) {
    if (!isPair(imageSize) || !imageSize.every((n) => isInteger(n) && n >= 1)) {
      bad("geometry.image_size", "must be a pair of integers >= 1");
    }
  }

  const pixelSize = geometry["pixel_size"];
  if ("pixel_size" in geometry) {
    if (!isPair(pixelSize) || !pixelSize.every((n) => isFiniteNumber(n) && n > 0)) {
      bad("geometry.pixel_size", "must be a pair of numbers > 0");
    }
  }

  const tilt = geometry["tilt"];
  if ("tilt" in geometry) {
    if (!isObject(tilt)) {
      bad("geometry.tilt", "must be an object");
    } else {
      for (const key of TILT_REQUIRED) {
        if (!(key in tilt)) {
          bad(`geometry.tilt.${key}`, "required field is missing");
        }
      }
      const rotation = tilt["tilt_rotation"];
      if ("tilt_rotation" in tilt && !isFiniteNumber(rotation)) {
        bad("geometry.tilt.tilt_rotation", "must be a finite number of degrees");
      }
      const angle = tilt["tilt_angle"];
      if ("tilt_angle" in tilt && (!isFiniteNumber(angle) || Math.abs(angle) >= 90)) {
        bad("geometry.tilt.tilt_angle", "must be a number strictly between -90 and 90 degrees");
      }
    }
  }
}

function validateMasks(masks: JsonValue | undefined, bad: (path: string, message: string) => void): void {
  if (!Array.isArray(masks)) {
    bad("masks", "must be an array");
    return;
  }
  masks.forEach((mask, i) => {
    if (!isObject(mask)) {
      bad(`masks.${i}`, "must be an object");
      return;
    }
    const file = mask["path_to_file"];
    if (typeof file !== "string" || file.length === 0) {
      bad(`masks.${i}.path_to_file`, "must be a non-empty string");
    }
    const format = mask["format"];
    if (format !== undefined && (typeof format !== "string" || !MASK_FORMATS.includes(format))) {
      bad(`masks.${i}.format`, `must be one of ${MASK_FORMATS.join(", ")}`);
    }
  });
}

function validateSlices(
  slices: JsonValue | undefined,
  doc: JsonObject,
  bad: (path: string, message: string) => void,
): void {
  if (!Array.isArray(slices)) {
    bad("slices", "must be an array");
    return;
  }
  const geometry = doc["geometry"];
  const imageSize = isObject(geometry) ? geometry["image_size"] : undefined;
  const sizeKnown = isPair(imageSize) && imageSize.every((n) => isInteger(n) && n >= 1);
  const masks = doc["masks"];
  const maskCount = Array.isArray(masks) ? masks.length : 0;

  slices.forEach((slice, i) => {
    if (!isObject(slice)) {
      bad(`slices.${i}`, "must be an object");
      return;
    }
    const direction = slice["direction"];
    if (direction !== "x" && direction !== "y") {
      bad(`slices.${i}.direction`, 'must be "x" or "y"');
    }
    const plane = slice["plane"];
    if (plane !== "InPlane" && plane !== "Vertical") {
      bad(`slices.${i}.plane`, 'must be "InPlane" or "Vertical"');
    }
    const position = slice["position"];
    if (!isFiniteNumber(position)) {
      bad(`slices.${i}.position`, "must be a finite number of pixels");
    }
    const margin = slice["margin"];
    if (!isInteger(margin) || margin < 0) {
      bad(`slices.${i}.margin`, "must be an integer >= 0");
    }
    const ref = slice["mask_reference"];
    if (!isInteger(ref) || ref < 0 || ref >= maskCount) {
      bad(`slices.${i}.mask_reference`, `must index into masks (0..${Math.max(maskCount - 1, 0)})`);
    }
    if (
      sizeKnown &&
      (direction === "x" || direction === "y") &&
      isFiniteNumber(position) &&
      isInteger(margin) &&
      margin >= 0
    ) {
      const extent = direction === "x" ? (imageSize[0] as number) : (imageSize[1] as number);
      if (position + margin < 0 || position - margin > extent - 1) {
        bad(`slices.${i}.position`, `window misses the detector (0..${extent - 1})`);
      }
    }
  });
}

function clone(value: JsonValue): JsonValue {
  if (Array.isArray(value)) {
    return value.map(clone);
  }
  if (isObject(value)) {
    const out: JsonObject = {};
    for (const [k, v] of Object.entries(value)) {
      out[k] = clone(v);
    }
    return out;
  }
  return value;
}

function splitPath(path: string): (string | number)[] {
  return path.split(".").map((part) => (/^\d+$/.test(part) ? Number(part) : part));
}

export function getField(doc: JsonObject, path: string): JsonValue | undefined {
  let node: JsonValue = doc;
  for (const part of splitPath(path)) {
    if (typeof part === "number") {
      if (!Array.isArray(node) || part >= node.length) {
        return undefined;
      }
      node = node[part] as JsonValue;
    } else {
      if (!isObject(node) || !(part in node)) {
        return undefined;
      }
      node = node[part] as JsonValue;
    }
  }
  return node;
}

/**
 * Return a copy of the document with one field replaced.  Key order is
 * preserved, so exporting the result differs from the original in exactly
 * the edited field.
 */
export function setField(doc: JsonObject, path: string, value: JsonValue): JsonObject {
  const copy = clone(doc) as JsonObject;
  const parts = splitPath(path);
  let node: JsonValue = copy;
  for (const part of parts.slice(0, -1)) {
    if (typeof part === "number") {
      if (!Array.isArray(node) || part >= node.length) {
        throw new Error(`no such field: ${path}`);
      }
      node = node[part] as JsonValue;
    } else {
      if (!isObject(node) || !(part in node)) {
        throw new Error(`no such field: ${path}`);
      }
      node = node[part] as JsonValue;
    }
  }
  const last = parts[parts.length - 1];
  if (last === undefined) {
    throw new Error("empty path");
  }
  if (typeof last === "number") {
    if (!Array.isArray(node) || last >= node.length) {
      throw new Error(`no such field: ${path}`);
    }
    node[last] = value;
  } else {
    if (!isObject(node)) {
      throw new Error(`no such field: ${path}`);
    }
    node[last] = value;
  }
  return copy;
}

export function exportDocument(doc: JsonObject): string {
  return JSON.stringify(doc, null, 2) + "\n";
}

/** Paths whose values differ between two documents (missing counts as a difference). */
export function diffPaths(a: JsonObject, b: JsonObject): string[] {
  const out: string[] = [];
  walkDiff(a, b, "", out);
  return out;
}

function walkDiff(a: JsonValue | undefined, b: JsonValue | undefined, prefix: string, out: string[]): void {
  if (isObject(a) && isObject(b)) {
    const keys = new Set([...Object.keys(a), ...Object.keys(b)]);
    for (const key of keys) {
      walkDiff(a[key], b[key], prefix === "" ? key : `${prefix}.${key}`, out);
    }
    return;
  }
  if (Array.isArray(a) && Array.isArray(b)) {
    const n = Math.max(a.length, b.length);
    for (let i = 0; i < n; i += 1) {
      walkDiff(a[i], b[i], prefix === "" ? String(i) : `${prefix}.${i}`, out);
    }
    return;
  }
  if (a !== b) {
    out.push(prefix);
  }
}

export function canSend(errors: FieldError[]): boolean {
  return errors.length === 0;
}
