/** App shell: hash router, signer panel, screen lifecycle. */

import { gatewayApi } from "./api";
import { KeyError, SignerSession } from "./keys";
import { BlockDetailView, BlocksView, CrDetailView, QueueView } from "./views";

export { POLL_MS } from "./views";

let signer: SignerSession | null = null;

function setupSignerPanel(panel: HTMLElement): void {
  const label = panel.querySelector<HTMLElement>("#signer-label")!;
  const input = panel.querySelector<HTMLTextAreaElement>("#key-input")!;
  const loadBtn = panel.querySelector<HTMLButtonElement>("#key-load")!;
  const clearBtn = panel.querySelector<HTMLButtonElement>("#key-clear")!;

  const render = () => {
    const open = signer !== null && signer.active;
    label.textContent = open ? `signing as ${signer!.actorId}` : "no key loaded";
    clearBtn.hidden = !open;
    input.hidden = open;
    loadBtn.hidden = open;
  };

  loadBtn.addEventListener("click", () => {
    void (async () => {
      try {
        signer = await SignerSession.fromKeyFile(input.value);
        input.value = "";
        render();
      } catch (err) {
        label.textContent = err instanceof KeyError ? err.message : String(err);
      }
    })();
  });

  clearBtn.addEventListener("click", () => {
    signer?.clear();
    signer = null;
    render();
  });

  render();
}

export function startApp(): void {
  const outlet = document.querySelector<HTMLElement>("#outlet")!;
  const panel = document.querySelector<HTMLElement>("#signer-panel")!;
  setupSignerPanel(panel);

  const navigate = (hash: string) => {
    window.location.hash = hash;
  };
  const getSigner = () => signer;

  const queue = new QueueView(outlet, gatewayApi, navigate);
  const crDetail = new CrDetailView(outlet, gatewayApi, getSigner, navigate);
  const blocks = new BlocksView(outlet, gatewayApi, navigate);
  const blockDetail = new BlockDetailView(outlet, gatewayApi, navigate);
  const pollers = [queue, crDetail, blocks];

  const route = () => {
    for (const view of pollers) view.stop();
    outlet.replaceChildren();
    const hash = window.location.hash || "#/queue";
    const crMatch = /^#\/cr\/([0-9a-f]+)$/.exec(hash);
    const blockMatch = /^#\/blocks\/(\d+)$/.exec(hash);
    for (const link of document.querySelectorAll<HTMLAnchorElement>("nav a")) {
      link.classList.toggle("active", hash.startsWith(link.hash));
    }
    if (crMatch) {
      void crDetail.show(crMatch[1] as string);
    } else if (blockMatch) {
      void blockDetail.show(Number(blockMatch[1]));
    } else if (hash.startsWith("#/blocks")) {
      void blocks.start();
    } else {
      void queue.start();
    }
  };

  window.addEventListener("hashchange", route);
  route();
}

if (document.querySelector("#outlet")) {
  startApp();
}
