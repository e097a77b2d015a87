/** Local Ed25519 signing.
 *
 * Keys are pasted as the CLI's key-file JSON and imported into WebCrypto as
 * non-extractable handles: after import the raw seed is zeroed and only
 * signatures ever leave this module.  Nothing here talks to the network.
 */

import { signingText } from "./canonical";
import type { ApprovalDoc } from "./types";

/** ASN.1 PKCS#8 prefix for a raw Ed25519 seed (RFC 8410). */
export const PKCS8_PREFIX = "302e020100300506032b657004220420";

export class KeyError extends Error {}

export function hexToBytes(hex: string) {
  if (hex.length % 2 !== 0 || /[^0-9a-f]/.test(hex)) {
    throw new KeyError("key material must be lowercase hex");
  }
  const out = new Uint8Array(hex.length / 2);
  for (let i = 0; i < out.length; i++) {
    out[i] = parseInt(hex.slice(2 * i, 2 * i + 2), 16);
  }
  return out;
}

export function bytesToHex(bytes: Uint8Array): string {
  return Array.from(bytes, (b) => b.toString(16).padStart(2, "0")).join("");
}

async function importSeed(seedHex: string): Promise<CryptoKey> {
  if (seedHex.length !== 64) {
    throw new KeyError("signing key must be a 32-byte hex seed");
  }
  const pkcs8 = hexToBytes(PKCS8_PREFIX + seedHex);
  try {
    return await crypto.subtle.importKey("pkcs8", pkcs8, { name: "Ed25519" }, false, ["sign"]);
  } finally {
    pkcs8.fill(0);
  }
}

export interface KeyFileDoc {
  id: string;
  scheme: string;
  signing_key: string;
  verification_key?: string;
}

/** A pasted key file, reduced to an id plus a non-extractable signing handle. */
export class SignerSession {
  private constructor(
    readonly actorId: string,
    private key: CryptoKey | null,
  ) {}

  static async fromKeyFile(text: string): Promise<SignerSession> {
    let doc: unknown;
    try {
      doc = JSON.parse(text);
    } catch {
      throw new KeyError("not a JSON key file");
    }
    if (typeof doc !== "object" || doc === null) {
      throw new KeyError("key file must be a JSON object");
    }
    const { id, scheme, signing_key } = doc as Partial<KeyFileDoc>;
    if (typeof id !== "string" || !id) throw new KeyError("key file has no id");
    if (scheme !== "ed25519") throw new KeyError(`unsupported scheme ${String(scheme)}`);
    if (typeof signing_key !== "string") throw new KeyError("key file has no signing_key");
    const key = await importSeed(signing_key);
    return new SignerSession(id, key);
  }

  get active(): boolean {
    return this.key !== null;
  }

  clear(): void {
    this.key = null;
  }

  /** Hex Ed25519 signature over the canonical bytes with signature blanked. */
  async signDocument(doc: Record<string, unknown>): Promise<string> {
    if (!this.key) throw new KeyError("signer session is closed");
    const payload = new TextEncoder().encode(signingText(doc));
    const sig = await crypto.subtle.sign({ name: "Ed25519" }, this.key, payload);
    return bytesToHex(new Uint8Array(sig));
  }

  async buildApproval(
    crId: string,
    testId: string,
    result: "pass" | "fail",
    comment = "",
  ): Promise<ApprovalDoc> {
    const doc = {
      approver_id: this.actorId,
      cr_id: crId,
      test_id: testId,
      result,
      comment,
      signature: "",
    };
    const signature = await this.signDocument(doc);
    return { ...doc, signature };
  }
}
