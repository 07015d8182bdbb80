/** Pure rendering: every function maps data to an HTML string with no
 * hidden state, so replaying the same server responses reproduces the
 * identical transcript markup. */

import type { Message, Reply, SafetyVerdict } from "./types.js";

/** Turns-per-speaker guide shown next to the counter. */
export const TURN_GUIDE = 7;

export function escapeHtml(text: string): string {
  return text
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

/** Names of the detectors that flagged the reply, in a fixed order. */
export function detectorNames(safety: SafetyVerdict): string[] {
  const names: string[] = [];
  if (safety.offensive_by_blocklist) names.push("blocklist");
  if (safety.offensive_by_classifier) names.push("classifier");
  if (safety.gender_flags.female) names.push("gendered:female");
  if (safety.gender_flags.male) names.push("gendered:male");
  return names;
}

export function renderBadge(safety: SafetyVerdict): string {
  const names = detectorNames(safety);
  if (names.length === 0) {
    return '<span class="badge badge-clean">clean</span>';
  }
  const label = escapeHtml(names.join(", "));
  return `<span class="badge badge-flagged">flagged: ${label}</span>`;
}

export function renderMessage(message: Message): string {
  if (message.speaker === "human") {
    return `<div class="msg msg-human"><span class="text">${escapeHtml(
      message.text,
    )}</span></div>`;
  }
  const reply: Reply = message.reply;
  return `<div class="msg msg-model"><span class="text">${escapeHtml(
    reply.text,
  )}</span> ${renderBadge(reply.safety)}</div>`;
}

export function renderTranscript(messages: Message[]): string {
  return `<div class="transcript">${messages.map(renderMessage).join("")}</div>`;
}

/** Human-turn counter against the per-speaker conversation guide. */
export function renderTurnCounter(messages: Message[]): string {
  const humanTurns = messages.filter((m) => m.speaker === "human").length;
  return `<div class="turn-counter">turn ${humanTurns} / ${TURN_GUIDE}</div>`;
}

export function renderImagePicker(images: string[], chosen: string | null): string {
  const options = images
    .map((id) => {
      const sel = id === chosen ? " selected" : "";
      return `<option value="${escapeHtml(id)}"${sel}>${escapeHtml(id)}</option>`;
    })
    .join("");
  return (
    '<select class="image-picker"><option value="">(no image)</option>' +
    options +
    "</select>"
  );
}

export function renderErrorBanner(message: string): string {
  return `<div class="banner banner-error">${escapeHtml(
    message,
  )} <button class="retry">retry</button></div>`;
}
