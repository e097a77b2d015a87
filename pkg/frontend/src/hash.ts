/** Content hashing mirrored from the ledger so the browser can check what it
 * is shown instead of trusting the gateway. */

import { canonicalBytes, encodeCanonical } from "./canonical";
import type { BlockDoc } from "./types";

export async function sha256Hex(data: Uint8Array | string): Promise<string> {
  const bytes = typeof data === "string" ? new TextEncoder().encode(data) : new Uint8Array(data);
  const digest = await crypto.subtle.digest("SHA-256", bytes);
  return Array.from(new Uint8Array(digest), (b) => b.toString(16).padStart(2, "0")).join("");
}

/** Hash of a block document: canonical bytes with block_hash blanked, so the
 * carried hash never covers itself. */
export async function computeBlockHash(block: BlockDoc): Promise<string> {
  const body: Record<string, unknown> = { ...block, block_hash: "" };
  return sha256Hex(canonicalBytes(body));
}

export interface BlockVerification {
  computed: string;
  carried: string;
  ok: boolean;
}

export async function verifyBlock(block: BlockDoc): Promise<BlockVerification> {
  const computed = await computeBlockHash(block);
  const carried = block.block_hash;
  return { computed, carried, ok: computed === carried && carried.length === 64 };
}

/** A CR's identity is the hash of its full signed proposal document. */
export async function computeCrId(proposal: Record<string, unknown>): Promise<string> {
  return sha256Hex(encodeCanonical(proposal));
}
