/** Flatten a CR record into a displayable event sequence. */

import type { CrRecord } from "./types";

export interface TimelineEvent {
  kind: "proposed" | "approval" | "ack" | "state";
  label: string;
  detail: string;
}

export function buildTimeline(cr: CrRecord): TimelineEvent[] {
  const events: TimelineEvent[] = [
    {
      kind: "proposed",
      label: `proposed by ${cr.proposal.proposer_id}`,
      detail: `targets ${cr.proposal.target_devices.join(", ")}`,
    },
  ];
  for (const a of cr.approvals) {
    events.push({
      kind: "approval",
      label: `${a.approver_id} voted ${a.result} on ${a.test_id}`,
      detail: a.comment,
    });
  }
  for (const ack of cr.acks) {
    events.push({
      kind: "ack",
      label: `${ack.device_id} reported ${ack.status}`,
      detail: ack.detail,
    });
  }
  events.push({ kind: "state", label: `state: ${cr.state}`, detail: "" });
  return events;
}
