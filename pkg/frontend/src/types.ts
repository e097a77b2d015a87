/** Gateway wire shapes, mirrored from the ledger's documents. */

export interface StatusDoc {
  height: number;
  tip_hash: string;
}

export interface IdentityDoc {
  id: string;
  role: string;
  scheme: string;
  verification_key: string;
}

export interface ProposalDoc {
  proposer_id: string;
  target_devices: string[];
  config_document: string;
  created_at: number;
  nonce: string;
  signature: string;
}

export interface ApprovalDoc {
  approver_id: string;
  cr_id: string;
  test_id: string;
  result: "pass" | "fail";
  comment: string;
  signature: string;
}

export interface AckDoc {
  device_id: string;
  cr_id: string;
  status: string;
  detail: string;
  signature: string;
}

export interface CrRecord {
  cr_id: string;
  proposal: ProposalDoc;
  approvals: ApprovalDoc[];
  acks: AckDoc[];
  state: string;
  vp_id: string;
}

export interface CrListing {
  crs: CrRecord[];
}

export interface TestRuleDoc {
  test_id: string;
  approvers: string[];
  rule_kind: "m_of_n" | "majority";
  m: number;
  description: string;
}

export interface VpDoc {
  kind: "vp";
  policy_id: string;
  devices: string[];
  tests: TestRuleDoc[];
}

export interface TestProgressDoc {
  test_id: string;
  passes: number;
  fails: number;
  needed: number;
  satisfied: boolean;
  unreachable: boolean;
}

export interface VpEvaluationDoc {
  status: "fulfilled" | "pending" | "failed";
  reason: string;
  tests: TestProgressDoc[];
}

export interface CrDetail {
  cr: CrRecord;
  evaluation: VpEvaluationDoc;
  vp: VpDoc;
}

export interface TransactionDoc {
  tx_id: string;
  creator: string;
  chaincode: string;
  operation: string;
  args: string[];
  nonce: string;
  read_set: [string, [number, number]][];
  write_set: [string, string][];
  response: string;
  endorsements: { peer_id: string; result_digest: string; signature: string }[];
}

export interface BlockDoc {
  number: number;
  prev_hash: string;
  timestamp: number;
  transactions: TransactionDoc[];
  block_hash: string;
}

export interface BlockHeader {
  number: number;
  block_hash: string;
  prev_hash: string;
  timestamp: number;
  tx_count: number;
}

export interface BlockListing {
  height: number;
  blocks: BlockHeader[];
}

export interface SubmitReceipt {
  tx_id: string;
  validity_flag: string;
  block_number: number;
  tx_index: number;
  cr_id?: string;
  state?: string;
  vp_status?: string;
}

export interface ErrorBody {
  error: string;
  detail: string;
}
