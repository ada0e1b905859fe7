/**
 * DOM layer: paints Screen models and forwards clicks to the client.
 *
 * Repaints on every view change and, while a decision is open, four
 * times a second so the countdown moves. All content decisions live in
 * render.ts; this file only creates elements.
 */

import { SessionClient } from "./client.js";
import { DecisionModel, EndModel, renderView, ResultModel, Screen, WaitingModel } from "./render.js";

const REPAINT_MS = 250;

function el(tag: string, className: string, text?: string): HTMLElement {
  const node = document.createElement(tag);
  node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

function paintDecision(root: HTMLElement, model: DecisionModel,
                       client: SessionClient): void {
  const page = el("div", "page decision");
  if (model.practice) page.appendChild(el("span", "badge practice", "practice"));
  page.appendChild(el("h2", "round-label", model.roundLabel));

  const urgency = el("p", model.urgent ? "urgency urgent" : "urgency",
    `Urgency: ${model.urgency}${model.urgent ? " (high)" : ""}`);
  page.appendChild(urgency);
  page.appendChild(el("p", "karma", `Karma: ${model.karma}`));
  page.appendChild(el("p", "score", `Score: ${model.score}`));
  page.appendChild(el("p", "countdown", `Time left: ${model.secondsLeft}s`));

  if (model.inactivityWarning) {
    page.appendChild(el("p", "warning", model.inactivityWarning));
  }
  if (model.rejectReason) {
    page.appendChild(el("p", "warning", `Bid rejected: ${model.rejectReason}`));
  }

  const controls = el("div", "controls");
  if (model.controls.style === "buttons") {
    for (const option of model.controls.options) {
      const button = el("button", "bid-button", String(option)) as HTMLButtonElement;
      button.disabled = model.locked;
      button.addEventListener("click", () => client.submitBid(option));
      controls.appendChild(button);
    }
  } else {
    const input = el("input", "bid-input") as HTMLInputElement;
    input.type = "number";
    input.min = String(model.controls.min);
    input.max = String(model.controls.max);
    input.value = "0";
    input.disabled = model.locked;
    const submit = el("button", "bid-submit", "Bid") as HTMLButtonElement;
    submit.disabled = model.locked;
    const place = () => client.submitBid(Number(input.value));
    submit.addEventListener("click", place);
    input.addEventListener("keydown", (event) => {
      if ((event as KeyboardEvent).key === "Enter") place();
    });
    controls.appendChild(input);
    controls.appendChild(submit);
  }
  page.appendChild(controls);

  if (model.submitted !== null) {
    const status = model.acked ? "recorded" : "sent";
    page.appendChild(el("p", "submitted",
      `Your bid of ${model.submitted} was ${status}. Waiting for the round to close.`));
  }
  root.appendChild(page);
}

function paintResult(root: HTMLElement, model: ResultModel): void {
  const page = el("div", "page result");
  if (model.practice) page.appendChild(el("span", "badge practice", "practice"));
  page.appendChild(el("h2", model.won ? "headline won" : "headline lost",
    model.headline));
  page.appendChild(el("p", "bids",
    `Your bid: ${model.ownBid}. Opposing bid: ${model.opponentBid}.`));
  page.appendChild(el("p", "payment",
    `Paid ${model.payment}, received ${model.received} from redistribution.`));
  page.appendChild(el("p", "karma", `Karma: ${model.karma}`));
  page.appendChild(el("p", "score", `Score: ${model.score}`));
  if (model.inactiveNotice) page.appendChild(el("p", "warning", model.inactiveNotice));
  if (model.droppedNotice) page.appendChild(el("p", "warning dropped", model.droppedNotice));
  root.appendChild(page);
}

function paintEnd(root: HTMLElement, model: EndModel): void {
  const page = el("div", "page end");
  page.appendChild(el("h2", "headline", "Session complete"));
  page.appendChild(el("p", "score", `Final score: ${model.finalScore}`));
  page.appendChild(el("p", "fees",
    `Bonus ${model.bonusFee} + fixed ${model.fixedFee} = ${model.totalFee}`));
  page.appendChild(el("p", model.dropped ? "warning dropped" : "thanks", model.message));
  root.appendChild(page);
}

function paintWaiting(root: HTMLElement, model: WaitingModel): void {
  const page = el("div", "page waiting");
  page.appendChild(el("p", "message", model.message));
  root.appendChild(page);
}

function paint(root: HTMLElement, screen: Screen, client: SessionClient): void {
  root.textContent = "";
  if (screen.banner) root.appendChild(el("div", "banner", screen.banner));
  switch (screen.page.kind) {
    case "decision":
      paintDecision(root, screen.page, client);
      break;
    case "result":
      paintResult(root, screen.page);
      break;
    case "end":
      paintEnd(root, screen.page);
      break;
    case "waiting":
      paintWaiting(root, screen.page);
      break;
  }
}

/** Bind a client to a root element; returns an unbind function. */
export function mount(root: HTMLElement, client: SessionClient): () => void {
  const repaint = () => paint(root, renderView(client.view, Date.now()), client);
  const unsubscribe = client.subscribe(repaint);
  const timer = setInterval(() => {
    if (client.view.round) repaint();
  }, REPAINT_MS);
  return () => {
    unsubscribe();
    clearInterval(timer);
  };
}
