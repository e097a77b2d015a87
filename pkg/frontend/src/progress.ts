/** Client-side re-evaluation of validity-policy progress.
 *
 * The dashboard recomputes per-test tallies from the raw approval list and
 * the governing policy document instead of displaying the server's aggregate
 * verbatim — a gateway that miscounted would be visibly inconsistent.
 */

import type { ApprovalDoc, TestProgressDoc, TestRuleDoc, VpDoc } from "./types";

export interface VpProgress {
  status: "fulfilled" | "pending" | "failed";
  reason: string;
  tests: TestProgressDoc[];
}

function evaluateTest(rule: TestRuleDoc, votes: Map<string, string>): TestProgressDoc {
  const n = rule.approvers.length;
  let passes = 0;
  for (const result of votes.values()) if (result === "pass") passes++;
  const fails = votes.size - passes;
  let needed: number;
  let satisfied: boolean;
  let unreachable: boolean;
  if (rule.rule_kind === "m_of_n") {
    needed = rule.m;
    satisfied = passes >= rule.m;
    unreachable = !satisfied && fails > n - rule.m;
  } else {
    needed = Math.floor(n / 2) + 1;
    satisfied = passes > fails && passes > Math.floor(n / 2);
    const bestPasses = n - fails;
    unreachable = !satisfied && !(bestPasses > fails && bestPasses > Math.floor(n / 2));
  }
  return { test_id: rule.test_id, passes, fails, needed, satisfied, unreachable };
}

/** First committed vote per approver wins; votes from outside a test's
 * approver set are ignored. */
export function evaluateVp(vp: VpDoc, approvals: readonly ApprovalDoc[]): VpProgress {
  const tests: TestProgressDoc[] = [];
  let reason = "";
  let allSatisfied = true;
  for (const rule of vp.tests) {
    const members = new Set(rule.approvers);
    const votes = new Map<string, string>();
    for (const vote of approvals) {
      if (vote.test_id !== rule.test_id || !members.has(vote.approver_id)) continue;
      if (!votes.has(vote.approver_id)) votes.set(vote.approver_id, vote.result);
    }
    const result = evaluateTest(rule, votes);
    tests.push(result);
    if (!result.satisfied) allSatisfied = false;
    if (result.unreachable && !reason) {
      reason = `test '${rule.test_id}' can no longer be satisfied`;
    }
  }
  if (allSatisfied) return { status: "fulfilled", reason: "", tests };
  if (reason) return { status: "failed", reason, tests };
  return { status: "pending", reason: "", tests };
}

export interface Eligibility {
  eligible: boolean;
  reason: string;
}

/** Can this signer still cast a vote on this test? */
export function eligibility(
  vp: VpDoc,
  approvals: readonly ApprovalDoc[],
  testId: string,
  signerId: string,
): Eligibility {
  const rule = vp.tests.find((t) => t.test_id === testId);
  if (!rule) return { eligible: false, reason: `unknown test '${testId}'` };
  if (!rule.approvers.includes(signerId)) {
    return { eligible: false, reason: `${signerId} is not an approver for '${testId}'` };
  }
  const voted = approvals.some((a) => a.test_id === testId && a.approver_id === signerId);
  if (voted) return { eligible: false, reason: `${signerId} already voted on '${testId}'` };
  return { eligible: true, reason: "" };
}
