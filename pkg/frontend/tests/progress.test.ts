import { describe, expect, it } from "vitest";

import { eligibility, evaluateVp } from "../src/progress";
import type { ApprovalDoc, VpDoc } from "../src/types";

function vote(approver: string, test: string, result: "pass" | "fail"): ApprovalDoc {
  return {
    approver_id: approver,
    cr_id: "c".repeat(64),
    test_id: test,
    result,
    comment: "",
    signature: "sig",
  };
}

function vp(tests: VpDoc["tests"]): VpDoc {
  return { kind: "vp", policy_id: "vp-test", devices: ["device-*"], tests };
}

const twoOfThree = vp([
  { test_id: "t-review", approvers: ["ana", "ben", "cho"], rule_kind: "m_of_n", m: 2, description: "" },
]);

describe("validity progress recount", () => {
  it("tracks an m-of-n test from open to fulfilled", () => {
    expect(evaluateVp(twoOfThree, []).status).toBe("pending");
    const one = evaluateVp(twoOfThree, [vote("ana", "t-review", "pass")]);
    expect(one.status).toBe("pending");
    expect(one.tests[0]).toMatchObject({ passes: 1, fails: 0, needed: 2, satisfied: false });
    const two = evaluateVp(twoOfThree, [
      vote("ana", "t-review", "pass"),
      vote("ben", "t-review", "pass"),
    ]);
    expect(two.status).toBe("fulfilled");
    expect(two.tests[0]?.satisfied).toBe(true);
  });

  it("declares a test unreachable once too many members failed", () => {
    const out = evaluateVp(twoOfThree, [
      vote("ben", "t-review", "fail"),
      vote("cho", "t-review", "fail"),
    ]);
    expect(out.status).toBe("failed");
    expect(out.tests[0]?.unreachable).toBe(true);
    expect(out.reason).toContain("t-review");
  });

  it("counts only the first vote per approver", () => {
    const out = evaluateVp(twoOfThree, [
      vote("ana", "t-review", "pass"),
      vote("ana", "t-review", "fail"),
    ]);
    expect(out.tests[0]).toMatchObject({ passes: 1, fails: 0 });
  });

  it("ignores votes from outside the approver set", () => {
    const out = evaluateVp(twoOfThree, [vote("mallory", "t-review", "pass")]);
    expect(out.tests[0]).toMatchObject({ passes: 0, fails: 0 });
  });

  it("evaluates majority rules", () => {
    const maj = vp([
      { test_id: "t-vote", approvers: ["ana", "ben", "cho"], rule_kind: "majority", m: 0, description: "" },
    ]);
    expect(evaluateVp(maj, [vote("ana", "t-vote", "pass")]).status).toBe("pending");
    expect(
      evaluateVp(maj, [vote("ana", "t-vote", "pass"), vote("ben", "t-vote", "pass")]).status,
    ).toBe("fulfilled");
    const lost = evaluateVp(maj, [vote("ana", "t-vote", "fail"), vote("ben", "t-vote", "fail")]);
    expect(lost.status).toBe("failed");
    expect(lost.tests[0]?.needed).toBe(2);
  });

  it("requires every test to be satisfied", () => {
    const multi = vp([
      { test_id: "t-a", approvers: ["ana"], rule_kind: "m_of_n", m: 1, description: "" },
      { test_id: "t-b", approvers: ["ben"], rule_kind: "m_of_n", m: 1, description: "" },
    ]);
    const half = evaluateVp(multi, [vote("ana", "t-a", "pass")]);
    expect(half.status).toBe("pending");
    const both = evaluateVp(multi, [vote("ana", "t-a", "pass"), vote("ben", "t-b", "pass")]);
    expect(both.status).toBe("fulfilled");
  });
});

describe("vote eligibility", () => {
  it("permits a member who has not voted", () => {
    expect(eligibility(twoOfThree, [], "t-review", "ana").eligible).toBe(true);
  });

  it("blocks outsiders, repeat voters, and unknown tests", () => {
    expect(eligibility(twoOfThree, [], "t-review", "mallory")).toMatchObject({
      eligible: false,
      reason: expect.stringContaining("not an approver"),
    });
    expect(
      eligibility(twoOfThree, [vote("ana", "t-review", "pass")], "t-review", "ana"),
    ).toMatchObject({ eligible: false, reason: expect.stringContaining("already voted") });
    expect(eligibility(twoOfThree, [], "t-nope", "ana").eligible).toBe(false);
  });
});
