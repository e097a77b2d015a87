/** DOM controllers for the three screens: review queue, CR detail, explorer.
 *
 * Every figure a controller shows is recomputed client-side from raw
 * documents (approval tallies from the approval list, CR ids and block
 * hashes from canonical bytes); server aggregates are cross-checked, not
 * trusted.
 */

import type { GatewayApi } from "./api";
import { ApiError } from "./api";
import { computeCrId, verifyBlock } from "./hash";
import type { SignerSession } from "./keys";
import { eligibility, evaluateVp } from "./progress";
import { buildTimeline } from "./timeline";
import type { BlockDoc, BlockHeader, CrDetail, CrRecord, VpDoc } from "./types";

export const POLL_MS = 2000;

export type Navigate = (hash: string) => void;
export type GetSigner = () => SignerSession | null;

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className = "",
  text = "",
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text) node.textContent = text;
  return node;
}

function shortId(id: string): string {
  return id.length > 12 ? id.slice(0, 12) + "…" : id;
}

function stateBadge(state: string): HTMLElement {
  const badge = el("span", `badge state-${state}`, state);
  badge.dataset.testid = "state-badge";
  return badge;
}

function errorBar(root: HTMLElement, message: string): void {
  let bar = root.querySelector<HTMLElement>(".error-bar");
  if (!message) {
    bar?.remove();
    return;
  }
  if (!bar) {
    bar = el("div", "error-bar");
    bar.dataset.testid = "error-bar";
    root.prepend(bar);
  }
  bar.textContent = message;
}

abstract class PollingView {
  private timer: ReturnType<typeof setInterval> | null = null;

  abstract refresh(): Promise<void>;

  /** Initial load plus a steady poll; safe to call repeatedly. */
  start(): Promise<void> {
    this.stop();
    this.timer = setInterval(() => {
      void this.refresh().catch(() => undefined);
    }, POLL_MS);
    return this.refresh();
  }

  stop(): void {
    if (this.timer !== null) {
      clearInterval(this.timer);
      this.timer = null;
    }
  }
}

// ---------------------------------------------------------------------------
// Review queue

export class QueueView extends PollingView {
  /** Governing policies, cached by policy id (they are immutable by id). */
  private vps = new Map<string, VpDoc>();
  private stateFilter = "";

  constructor(
    private root: HTMLElement,
    private api: GatewayApi,
    private navigate: Navigate,
  ) {
    super();
  }

  async refresh(): Promise<void> {
    try {
      const [status, listing] = await Promise.all([
        this.api.fetchStatus(),
        this.api.fetchCrs(this.stateFilter || undefined),
      ]);
      await this.prefetchPolicies(listing.crs);
      this.render(status.height, status.tip_hash, listing.crs);
    } catch (err) {
      errorBar(this.root, `gateway unreachable: ${String(err)}`);
    }
  }

  private async prefetchPolicies(crs: readonly CrRecord[]): Promise<void> {
    for (const cr of crs) {
      if (this.vps.has(cr.vp_id)) continue;
      const detail = await this.api.fetchCr(cr.cr_id);
      this.vps.set(detail.vp.policy_id, detail.vp);
    }
  }

  private render(height: number, tipHash: string, crs: readonly CrRecord[]): void {
    this.root.replaceChildren();

    const head = el("div", "pane-head");
    head.append(el("h2", "", "review queue"));
    const chain = el("span", "chain-note", `height ${height} · tip ${shortId(tipHash)}`);
    chain.dataset.testid = "chain-note";
    head.append(chain);

    const filter = el("select", "state-filter");
    for (const state of ["", "proposed", "valid", "acknowledged", "rejected", "apply_failed"]) {
      const opt = el("option", "", state || "all states");
      opt.value = state;
      if (state === this.stateFilter) opt.selected = true;
      filter.append(opt);
    }
    filter.addEventListener("change", () => {
      this.stateFilter = filter.value;
      void this.refresh();
    });
    head.append(filter);
    this.root.append(head);

    if (!crs.length) {
      this.root.append(el("p", "empty", "no configuration requests"));
      return;
    }

    const table = el("table", "queue");
    const hdr = el("tr");
    for (const title of ["request", "proposer", "devices", "state", "review progress"]) {
      hdr.append(el("th", "", title));
    }
    table.append(hdr);

    for (const cr of crs) {
      const row = el("tr", "queue-row");
      row.dataset.testid = "queue-row";
      row.dataset.crId = cr.cr_id;

      const idCell = el("td");
      idCell.append(el("code", "mono", shortId(cr.cr_id)));
      row.append(idCell);
      row.append(el("td", "", cr.proposal.proposer_id));
      row.append(el("td", "", cr.proposal.target_devices.join(", ")));

      const stateCell = el("td");
      stateCell.append(stateBadge(cr.state));
      row.append(stateCell);

      row.append(this.progressCell(cr));
      row.addEventListener("click", () => this.navigate(`#/cr/${cr.cr_id}`));
      table.append(row);
    }
    this.root.append(table);
  }

  private progressCell(cr: CrRecord): HTMLElement {
    const cell = el("td", "progress-cell");
    cell.dataset.testid = "progress-cell";
    const vp = this.vps.get(cr.vp_id);
    if (!vp) {
      cell.textContent = "policy pending";
      return cell;
    }
    const progress = evaluateVp(vp, cr.approvals);
    for (const test of progress.tests) {
      const mark = test.satisfied ? "✓" : test.unreachable ? "✗" : "·";
      cell.append(
        el("span", "test-progress", `${test.test_id} ${test.passes}/${test.needed} ${mark}`),
      );
    }
    return cell;
  }
}

// ---------------------------------------------------------------------------
// CR detail

export class CrDetailView extends PollingView {
  private crId = "";
  private lastReceipt = "";

  constructor(
    private root: HTMLElement,
    private api: GatewayApi,
    private getSigner: GetSigner,
    private navigate: Navigate,
  ) {
    super();
  }

  show(crId: string): Promise<void> {
    if (crId !== this.crId) this.lastReceipt = "";
    this.crId = crId;
    return this.start();
  }

  async refresh(): Promise<void> {
    if (!this.crId) return;
    try {
      const detail = await this.api.fetchCr(this.crId);
      const recomputedId = await computeCrId(detail.cr.proposal as unknown as Record<string, unknown>);
      this.render(detail, recomputedId);
    } catch (err) {
      errorBar(this.root, `cannot load ${shortId(this.crId)}: ${String(err)}`);
    }
  }

  private render(detail: CrDetail, recomputedId: string): void {
    const { cr, vp } = detail;
    this.root.replaceChildren();

    const head = el("div", "pane-head");
    head.append(el("h2", "", `request ${shortId(cr.cr_id)}`));
    head.append(stateBadge(cr.state));

    // The id is the hash of the signed proposal; recompute it so a gateway
    // serving a doctored proposal under a real id is caught immediately.
    const idBadge = el(
      "span",
      recomputedId === cr.cr_id ? "badge verify-ok" : "badge verify-bad",
      recomputedId === cr.cr_id ? "id verified" : "ID MISMATCH",
    );
    idBadge.dataset.testid = "cr-id-badge";
    idBadge.title = `recomputed ${recomputedId}`;
    head.append(idBadge);
    this.root.append(head);

    const meta = el("dl", "meta");
    const pairs: [string, string][] = [
      ["cr_id", cr.cr_id],
      ["proposer", cr.proposal.proposer_id],
      ["devices", cr.proposal.target_devices.join(", ")],
      ["policy", cr.vp_id],
    ];
    for (const [k, v] of pairs) {
      meta.append(el("dt", "", k));
      meta.append(el("dd", "mono", v));
    }
    this.root.append(meta);

    const config = el("pre", "config-doc");
    try {
      config.textContent = JSON.stringify(JSON.parse(cr.proposal.config_document), null, 2);
    } catch {
      config.textContent = cr.proposal.config_document;
    }
    this.root.append(el("h3", "", "configuration"));
    this.root.append(config);

    this.root.append(el("h3", "", "review progress"));
    this.root.append(this.progressTable(detail));

    this.root.append(el("h3", "", "timeline"));
    const list = el("ul", "timeline");
    for (const event of buildTimeline(cr)) {
      const item = el("li", `event-${event.kind}`, event.label);
      if (event.detail) item.append(el("span", "event-detail", ` — ${event.detail}`));
      list.append(item);
    }
    this.root.append(list);

    this.root.append(this.approveForm(detail));

    const back = el("a", "back-link", "← queue");
    back.href = "#/queue";
    back.addEventListener("click", (e) => {
      e.preventDefault();
      this.navigate("#/queue");
    });
    this.root.append(back);
  }

  private progressTable(detail: CrDetail): HTMLElement {
    const progress = evaluateVp(detail.vp, detail.cr.approvals);
    const table = el("table", "progress");
    const hdr = el("tr");
    for (const title of ["test", "approvers", "passes", "fails", "needed", "verdict"]) {
      hdr.append(el("th", "", title));
    }
    table.append(hdr);
    for (const test of progress.tests) {
      const rule = detail.vp.tests.find((t) => t.test_id === test.test_id);
      const row = el("tr");
      row.dataset.testid = "test-row";
      row.append(el("td", "mono", test.test_id));
      row.append(el("td", "", rule ? rule.approvers.join(", ") : ""));
      row.append(el("td", "", String(test.passes)));
      row.append(el("td", "", String(test.fails)));
      row.append(el("td", "", String(test.needed)));
      const verdict = test.satisfied ? "satisfied" : test.unreachable ? "unreachable" : "open";
      const cell = el("td");
      cell.append(el("span", `badge verdict-${verdict}`, verdict));
      row.append(cell);
      table.append(row);
    }

    // Flag any disagreement between our tally and the server's aggregate.
    const server = detail.evaluation;
    const localStatus =
      progress.status === "fulfilled" ? "fulfilled" : progress.status;
    if (server.status !== localStatus) {
      const warn = el(
        "div",
        "error-bar",
        `server reports '${server.status}' but local recount says '${localStatus}'`,
      );
      warn.dataset.testid = "aggregate-mismatch";
      const wrap = el("div");
      wrap.append(warn, table);
      return wrap;
    }
    return table;
  }

  private approveForm(detail: CrDetail): HTMLElement {
    const pane = el("div", "approve-pane");
    pane.append(el("h3", "", "cast a vote"));
    if (this.lastReceipt) {
      const receipt = el("p", "inline-status ok", this.lastReceipt);
      receipt.dataset.testid = "receipt";
      pane.append(receipt);
    }
    const signer = this.getSigner();
    if (!signer || !signer.active) {
      pane.append(el("p", "hint", "load a key file in the signer panel to vote"));
      return pane;
    }
    if (detail.cr.state !== "proposed") {
      pane.append(el("p", "hint", `voting closed: request is ${detail.cr.state}`));
      return pane;
    }

    const form = el("form", "approve-form");
    form.dataset.testid = "approve-form";

    const testSelect = el("select", "test-select");
    for (const rule of detail.vp.tests) {
      const opt = el("option", "", rule.test_id);
      opt.value = rule.test_id;
      testSelect.append(opt);
    }
    form.append(testSelect);

    const resultSelect = el("select", "result-select");
    for (const result of ["pass", "fail"]) {
      const opt = el("option", "", result);
      opt.value = result;
      resultSelect.append(opt);
    }
    form.append(resultSelect);

    const comment = el("input", "comment-input");
    comment.placeholder = "comment";
    form.append(comment);

    const note = el("p", "eligibility-note");
    note.dataset.testid = "eligibility-note";
    const updateNote = () => {
      const check = eligibility(detail.vp, detail.cr.approvals, testSelect.value, signer.actorId);
      note.textContent = check.eligible ? `signing as ${signer.actorId}` : check.reason;
      submit.disabled = !check.eligible;
    };

    const submit = el("button", "", "sign & submit");
    submit.type = "submit";
    form.append(submit);
    form.append(note);

    const inline = el("p", "inline-status");
    inline.dataset.testid = "inline-status";
    form.append(inline);

    testSelect.addEventListener("change", updateNote);
    updateNote();

    form.addEventListener("submit", (event) => {
      event.preventDefault();
      void (async () => {
        inline.className = "inline-status";
        inline.textContent = "signing…";
        try {
          const doc = await signer.buildApproval(
            detail.cr.cr_id,
            testSelect.value,
            resultSelect.value as "pass" | "fail",
            comment.value,
          );
          const receipt = await this.api.submitApproval(doc as unknown as Record<string, unknown>);
          this.lastReceipt = `committed ${receipt.validity_flag} in block ${receipt.block_number} tx ${receipt.tx_index}`;
          await this.refresh();
        } catch (err) {
          // Conflicts (duplicate vote, state already flipped) surface inline;
          // the poll will pull the authoritative record shortly anyway.
          inline.className = "inline-status bad";
          if (err instanceof ApiError) {
            inline.textContent = `${err.status} ${err.code}: ${err.message}`;
          } else {
            inline.textContent = String(err);
          }
        }
      })();
    });

    pane.append(form);
    return pane;
  }
}

// ---------------------------------------------------------------------------
// Block explorer

export class BlocksView extends PollingView {
  constructor(
    private root: HTMLElement,
    private api: GatewayApi,
    private navigate: Navigate,
  ) {
    super();
  }

  async refresh(): Promise<void> {
    try {
      const listing = await this.api.fetchBlocks();
      this.render(listing.height, listing.blocks);
    } catch (err) {
      errorBar(this.root, `gateway unreachable: ${String(err)}`);
    }
  }

  private render(height: number, blocks: readonly BlockHeader[]): void {
    this.root.replaceChildren();
    const head = el("div", "pane-head");
    head.append(el("h2", "", "blocks"));
    head.append(el("span", "chain-note", `height ${height}`));
    this.root.append(head);

    const table = el("table", "blocks");
    const hdr = el("tr");
    for (const title of ["#", "hash", "prev", "txs", "timestamp"]) {
      hdr.append(el("th", "", title));
    }
    table.append(hdr);
    for (const block of [...blocks].reverse()) {
      const row = el("tr", "block-row");
      row.dataset.testid = "block-row";
      row.append(el("td", "", String(block.number)));
      row.append(el("td", "mono", shortId(block.block_hash)));
      row.append(el("td", "mono", shortId(block.prev_hash)));
      row.append(el("td", "", String(block.tx_count)));
      row.append(el("td", "", new Date(block.timestamp * 1000).toISOString()));
      row.addEventListener("click", () => this.navigate(`#/blocks/${block.number}`));
      table.append(row);
    }
    this.root.append(table);
  }
}

export class BlockDetailView {
  constructor(
    private root: HTMLElement,
    private api: GatewayApi,
    private navigate: Navigate,
  ) {}

  async show(number: number): Promise<void> {
    try {
      const block = await this.api.fetchBlock(number);
      await this.render(block);
    } catch (err) {
      errorBar(this.root, `cannot load block ${number}: ${String(err)}`);
    }
  }

  /** Exposed for rendering fixtures directly in tests. */
  async render(block: BlockDoc): Promise<void> {
    const verdict = await verifyBlock(block);
    this.root.replaceChildren();

    const head = el("div", "pane-head");
    head.append(el("h2", "", `block ${block.number}`));
    const badge = el(
      "span",
      verdict.ok ? "badge verify-ok" : "badge verify-bad",
      verdict.ok ? "hash verified" : "HASH MISMATCH",
    );
    badge.dataset.testid = "hash-badge";
    head.append(badge);
    this.root.append(head);

    const meta = el("dl", "meta");
    const pairs: [string, string][] = [
      ["carried hash", verdict.carried],
      ["recomputed", verdict.computed],
      ["prev hash", block.prev_hash],
      ["timestamp", new Date(block.timestamp * 1000).toISOString()],
    ];
    for (const [k, v] of pairs) {
      meta.append(el("dt", "", k));
      const dd = el("dd", "mono", v);
      if (k === "recomputed") dd.dataset.testid = "recomputed-hash";
      meta.append(dd);
    }
    this.root.append(meta);

    this.root.append(el("h3", "", `transactions (${block.transactions.length})`));
    const table = el("table", "txs");
    const hdr = el("tr");
    for (const title of ["tx", "creator", "call", "writes", "endorsers"]) {
      hdr.append(el("th", "", title));
    }
    table.append(hdr);
    for (const tx of block.transactions) {
      const row = el("tr", "tx-row");
      row.dataset.testid = "tx-row";
      row.append(el("td", "mono", shortId(tx.tx_id)));
      row.append(el("td", "", tx.creator));
      row.append(el("td", "mono", `${tx.chaincode}:${tx.operation}`));
      row.append(el("td", "", String(tx.write_set.length)));
      row.append(el("td", "", tx.endorsements.map((e) => e.peer_id).join(", ")));
      table.append(row);
    }
    this.root.append(table);

    const back = el("a", "back-link", "← blocks");
    back.href = "#/blocks";
    back.addEventListener("click", (e) => {
      e.preventDefault();
      this.navigate("#/blocks");
    });
    this.root.append(back);
  }
}
