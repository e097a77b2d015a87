/** Canonical JSON encoding, byte-identical to the ledger's serializer.
 *
 * The subset: maps with string keys sorted by code point, lists, strings,
 * integers, booleans, null.  No whitespace, no floats.  Signatures and
 * content hashes are computed over these exact bytes, so any deviation here
 * would make locally signed documents unverifiable — the golden-vector tests
 * pin this encoder to the server-side implementation.
 */

export class CanonicalError extends Error {}

function compareCodePoints(a: string, b: string): number {
  // Sort order is by Unicode code point; the default string comparison
  // would order by UTF-16 code unit and disagree beyond the BMP.
  const aPoints = Array.from(a);
  const bPoints = Array.from(b);
  const n = Math.min(aPoints.length, bPoints.length);
  for (let i = 0; i < n; i++) {
    const diff = (aPoints[i] as string).codePointAt(0)! - (bPoints[i] as string).codePointAt(0)!;
    if (diff !== 0) return diff;
  }
  return aPoints.length - bPoints.length;
}

function encodeValue(value: unknown, path: string): string {
  if (value === null) return "null";
  if (value === true) return "true";
  if (value === false) return "false";
  if (typeof value === "string") return JSON.stringify(value);
  if (typeof value === "number") {
    if (!Number.isSafeInteger(value)) {
      throw new CanonicalError(`${path}: only safe integers are encodable, got ${value}`);
    }
    return String(value);
  }
  if (typeof value === "bigint") {
    return value.toString();
  }
  if (Array.isArray(value)) {
    return "[" + value.map((item, i) => encodeValue(item, `${path}[${i}]`)).join(",") + "]";
  }
  if (typeof value === "object") {
    const proto = Object.getPrototypeOf(value);
    if (proto !== Object.prototype && proto !== null) {
      throw new CanonicalError(`${path}: unsupported object type`);
    }
    const entries = Object.entries(value as Record<string, unknown>);
    entries.sort(([a], [b]) => compareCodePoints(a, b));
    const parts = entries.map(
      ([key, item]) => `${JSON.stringify(key)}:${encodeValue(item, `${path}.${key}`)}`,
    );
    return "{" + parts.join(",") + "}";
  }
  throw new CanonicalError(`${path}: unsupported type ${typeof value}`);
}

/** Canonical text of a document (encode with TextEncoder for the bytes). */
export function encodeCanonical(value: unknown): string {
  return encodeValue(value, "$");
}

export function canonicalBytes(value: unknown): Uint8Array {
  return new TextEncoder().encode(encodeCanonical(value));
}

/** Canonical bytes with the given fields blanked — the form signatures and
 * content hashes cover, so the signed field never covers itself. */
export function signingText(
  doc: Record<string, unknown>,
  blankFields: readonly string[] = ["signature"],
): string {
  const blanked: Record<string, unknown> = { ...doc };
  for (const field of blankFields) blanked[field] = "";
  return encodeCanonical(blanked);
}
