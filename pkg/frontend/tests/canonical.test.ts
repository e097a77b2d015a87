import { describe, expect, it } from "vitest";

import { CanonicalError, canonicalBytes, encodeCanonical, signingText } from "../src/canonical";
import golden from "../testdata/golden.json";

describe("canonical encoding", () => {
  // The vectors were produced by the server-side serializer; every byte must
  // match or locally signed documents would not verify on chain.
  for (const tc of golden.canonical_cases) {
    it(`matches the server encoder: ${tc.name}`, () => {
      expect(encodeCanonical(tc.doc)).toBe(tc.encoded);
    });
  }

  it("encodes to UTF-8 bytes", () => {
    const bytes = canonicalBytes({ note: "héllo ☃" });
    expect(new TextDecoder().decode(bytes)).toBe('{"note":"héllo ☃"}');
  });

  it("sorts keys by code point, not UTF-16 code unit", () => {
    // "😀" is U+1F600 but its first UTF-16 unit (0xd83d) sorts below "ﬀ"
    // (U+FB00); a code-unit sort would invert these.
    expect(encodeCanonical({ "😀": 1, "ﬀ": 2 })).toBe('{"ﬀ":2,"😀":1}');
  });

  it("rejects floats", () => {
    expect(() => encodeCanonical({ x: 1.5 })).toThrow(CanonicalError);
  });

  it("rejects integers beyond 2**53-1", () => {
    expect(() => encodeCanonical({ x: 2 ** 53 })).toThrow(CanonicalError);
    expect(encodeCanonical({ x: 2 ** 53 - 1 })).toBe('{"x":9007199254740991}');
  });

  it("rejects NaN and infinities", () => {
    expect(() => encodeCanonical(Number.NaN)).toThrow(CanonicalError);
    expect(() => encodeCanonical(Infinity)).toThrow(CanonicalError);
  });

  it("rejects undefined and non-plain objects", () => {
    expect(() => encodeCanonical(undefined)).toThrow(CanonicalError);
    expect(() => encodeCanonical({ at: new Date(0) })).toThrow(CanonicalError);
    expect(() => encodeCanonical(new Map())).toThrow(CanonicalError);
  });

  it("names the offending path in errors", () => {
    expect(() => encodeCanonical({ a: [{ b: 0.5 }] })).toThrow(/\$\.a\[0\]\.b/);
  });

  it("blanks the signature field for signing bytes", () => {
    const doc = { ...golden.approval.doc_unsigned, signature: "not-blank" };
    expect(signingText(doc)).toBe(golden.approval.signing_bytes);
  });
});
