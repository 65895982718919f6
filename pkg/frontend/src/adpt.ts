/**
 * Independent parser for the ADPT1 adapter file format.
 *
 * Layout:
 *   bytes 0..5   magic "ADPT1\n"
 *   bytes 6..13  u64 little-endian manifest byte length (padding excluded)
 *   manifest     UTF-8 JSON (task_id, rank, alpha, labels, tensor table)
 *   padding      0x20 bytes up to the next 8-byte boundary
 *   payload      raw little-endian float32, row-major, manifest order
 *
 * Tensor offsets in the manifest are relative to the payload start and must
 * be contiguous; the payload must end exactly where the last tensor does.
 */

const MAGIC = Buffer.from("ADPT1\n", "latin1");
const HEADER_LEN = MAGIC.length + 8;

export class AdapterFormatError extends Error {
  constructor(readonly field: string, message: string) {
    super(message);
    this.name = "AdapterFormatError";
  }
}

export interface TensorEntry {
  name: string;
  rows: number;
  cols: number;
  /** Row-major values, length rows*cols. */
  data: Float64Array;
}

export interface Adapter {
  taskId: string;
  rank: number;
  alpha: number;
  groupLabel: string | null;
  langLabel: string | null;
  /** Tensors in manifest order (the writer emits lexicographic name order). */
  tensors: TensorEntry[];
}

function requireField(obj: Record<string, unknown>, key: string, where: string): unknown {
  if (!(key in obj)) {
    throw new AdapterFormatError(key, `manifest is missing field '${key}' in ${where}`);
  }
  return obj[key];
}

function requireString(obj: Record<string, unknown>, key: string, where: string): string {
  const value = requireField(obj, key, where);
  if (typeof value !== "string") {
    throw new AdapterFormatError(key, `manifest field '${key}' has the wrong type in ${where}`);
  }
  return value;
}

function requireInteger(obj: Record<string, unknown>, key: string, where: string): number {
  const value = requireField(obj, key, where);
  if (typeof value !== "number" || !Number.isInteger(value)) {
    throw new AdapterFormatError(key, `manifest field '${key}' has the wrong type in ${where}`);
  }
  return value;
}

export function parseAdapter(data: Buffer): Adapter {
  if (data.length < MAGIC.length || !data.subarray(0, MAGIC.length).equals(MAGIC)) {
    throw new AdapterFormatError("magic", "bad magic");
  }
  if (data.length < HEADER_LEN) {
    throw new AdapterFormatError("manifest_length", "file truncated before manifest length");
  }
  const manifestLen = Number(data.readBigUInt64LE(MAGIC.length));
  if (HEADER_LEN + manifestLen > data.length) {
    throw new AdapterFormatError("manifest_length", "manifest length exceeds file size");
  }
  let manifest: unknown;
  try {
    manifest = JSON.parse(data.subarray(HEADER_LEN, HEADER_LEN + manifestLen).toString("utf-8"));
  } catch (err) {
    throw new AdapterFormatError("manifest", `manifest is not valid UTF-8 JSON: ${err}`);
  }
  if (typeof manifest !== "object" || manifest === null || Array.isArray(manifest)) {
    throw new AdapterFormatError("manifest", "manifest root must be a JSON object");
  }
  const root = manifest as Record<string, unknown>;

  const taskId = requireString(root, "task_id", "header");
  const rank = requireInteger(root, "rank", "header");
  const alphaRaw = requireField(root, "alpha", "header");
  if (typeof alphaRaw !== "number") {
    throw new AdapterFormatError("alpha", "manifest field 'alpha' has the wrong type in header");
  }
  const groupLabel = (root["group_label"] ?? null) as string | null;
  const langLabel = (root["lang_label"] ?? null) as string | null;
  for (const [key, value] of [
    ["group_label", groupLabel],
    ["lang_label", langLabel],
  ] as const) {
    if (value !== null && typeof value !== "string") {
      throw new AdapterFormatError(key, `manifest field '${key}' must be a string or null`);
    }
  }
  const table = requireField(root, "tensors", "header");
  if (!Array.isArray(table)) {
    throw new AdapterFormatError("tensors", "manifest field 'tensors' has the wrong type in header");
  }

  const padding = (8 - ((HEADER_LEN + manifestLen) % 8)) % 8;
  const payloadStart = HEADER_LEN + manifestLen + padding;
  const payload = data.subarray(payloadStart);

  const seen = new Set<string>();
  const tensors: TensorEntry[] = [];
  let expectedOffset = 0;
  for (let i = 0; i < table.length; i++) {
    const row = table[i];
    if (typeof row !== "object" || row === null || Array.isArray(row)) {
      throw new AdapterFormatError("tensors", `tensor table entry ${i} must be an object`);
    }
    const where = `tensor table entry ${i}`;
    const entry = row as Record<string, unknown>;
    const name = requireString(entry, "name", where);
    const rows = requireInteger(entry, "rows", where);
    const cols = requireInteger(entry, "cols", where);
    const offset = requireInteger(entry, "offset", where);
    if (seen.has(name)) {
      throw new AdapterFormatError("name", `duplicate tensor name '${name}'`);
    }
    seen.add(name);
    if (rows < 1 || cols < 1) {
      throw new AdapterFormatError("shape", `tensor '${name}' declares a non-positive shape ${rows}x${cols}`);
    }
    if (offset !== expectedOffset) {
      throw new AdapterFormatError(
        "offset",
        `tensor '${name}' declares offset ${offset}, expected ${expectedOffset}`,
      );
    }
    const count = rows * cols;
    const byteLength = count * 4;
    if (offset + byteLength > payload.length) {
      throw new AdapterFormatError("payload", "payload shorter than manifest declares");
    }
    const values = new Float64Array(count);
    for (let j = 0; j < count; j++) {
      values[j] = payload.readFloatLE(offset + 4 * j);
    }
    tensors.push({ name, rows, cols, data: values });
    expectedOffset += byteLength;
  }
  if (expectedOffset !== payload.length) {
    throw new AdapterFormatError("payload", "payload longer than manifest declares");
  }
  if (rank < 1 || !(alphaRaw > 0)) {
    throw new AdapterFormatError("manifest", "manifest describes an invalid adapter: rank and alpha must be positive");
  }

  return { taskId, rank, alpha: alphaRaw, groupLabel, langLabel, tensors };
}
