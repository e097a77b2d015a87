/** Typed fetch wrappers for the gateway.
 *
 * Write bodies are sent as canonical bytes — the same bytes the signature
 * covers plus the filled signature field — so the server verifies exactly
 * what the local signer produced.
 */

import { encodeCanonical } from "./canonical";
import type {
  BlockDoc,
  BlockListing,
  CrDetail,
  CrListing,
  ErrorBody,
  IdentityDoc,
  StatusDoc,
  SubmitReceipt,
} from "./types";

export class ApiError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    detail: string,
  ) {
    super(detail || code);
  }
}

async function asApiError(res: Response): Promise<ApiError> {
  let body: Partial<ErrorBody> = {};
  try {
    body = (await res.json()) as Partial<ErrorBody>;
  } catch {
    // non-JSON error body; fall through to the status line
  }
  return new ApiError(res.status, body.error ?? `http_${res.status}`, body.detail ?? res.statusText);
}

async function getJson<T>(path: string): Promise<T> {
  const res = await fetch(path, { headers: { accept: "application/json" } });
  if (!res.ok) throw await asApiError(res);
  return (await res.json()) as T;
}

async function postCanonical<T>(path: string, doc: Record<string, unknown>): Promise<T> {
  const res = await fetch(path, {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: encodeCanonical(doc),
  });
  if (!res.ok) throw await asApiError(res);
  return (await res.json()) as T;
}

export interface GatewayApi {
  fetchStatus(): Promise<StatusDoc>;
  fetchRegistry(): Promise<IdentityDoc[]>;
  fetchCrs(state?: string): Promise<CrListing>;
  fetchCr(crId: string): Promise<CrDetail>;
  fetchBlocks(start?: number, end?: number): Promise<BlockListing>;
  fetchBlock(number: number): Promise<BlockDoc>;
  submitApproval(doc: Record<string, unknown>): Promise<SubmitReceipt>;
}

export const gatewayApi: GatewayApi = {
  fetchStatus: () => getJson<StatusDoc>("/status"),
  fetchRegistry: () => getJson<IdentityDoc[]>("/registry"),
  fetchCrs: (state?: string) =>
    getJson<CrListing>(state ? `/crs?state=${encodeURIComponent(state)}` : "/crs"),
  fetchCr: (crId: string) => getJson<CrDetail>(`/crs/${encodeURIComponent(crId)}`),
  fetchBlocks: (start = 0, end = -1) => getJson<BlockListing>(`/blocks?start=${start}&end=${end}`),
  fetchBlock: (number: number) => getJson<BlockDoc>(`/blocks/${number}`),
  submitApproval: (doc) => {
    const crId = typeof doc.cr_id === "string" ? doc.cr_id : "";
    return postCanonical<SubmitReceipt>(`/crs/${encodeURIComponent(crId)}/approvals`, doc);
  },
};
