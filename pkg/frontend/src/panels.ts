/**
 * Pure HTML renderers for result panels.
 *
 * Everything shown is read straight off the service payloads (thin-client
 * rule): bars use the exact `delta_norms` values, the sparkline the exact
 * trajectories, and the field list enumerates every key of the result
 * schema so nothing the service reports is hidden.
 */

import type { JobPayload, ResultPayload } from "./api.js";
import { classColor } from "./mask.js";

function esc(value: unknown): string {
  return String(value)
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;");
}

function codesSummary(codes: { codes: number[][]; present_classes: number[] }): string {
  const n = codes.codes.length;
  const d = codes.codes[0]?.length ?? 0;
  return `${n}x${d} codes, present classes [${codes.present_classes.join(", ")}]`;
}

function fieldValue(key: string, result: ResultPayload): string {
  switch (key) {
    case "final_codes":
      return codesSummary(result.final_codes);
    case "query_codes":
      return codesSummary(result.query_codes);
    case "delta_norms":
      return result.delta_norms.map((v) => v.toPrecision(4)).join(", ");
    case "loss_trajectory":
      return `${result.loss_trajectory.length} steps (decision, distance)`;
    case "prob_trajectory":
      return `${result.prob_trajectory.length} steps`;
    case "optimizer":
      return `lambda=${result.optimizer.lambda_weight} lr=${result.optimizer.learning_rate} ` +
        `steps=${result.optimizer.num_steps} seed=${result.optimizer.seed}`;
    case "target_regions":
      return `[${result.target_regions.join(", ")}]`;
    case "artifacts":
      return Object.keys(result.artifacts ?? {}).join(", ");
    default:
      return esc((result as unknown as Record<string, unknown>)[key]);
  }
}

/** Definition list covering every top-level field of the result payload. */
export function resultFieldsHtml(result: ResultPayload): string {
  const rows = Object.keys(result)
    .map(
      (key) =>
        `<div class="field" data-field="${esc(key)}"><dt>${esc(key)}</dt>` +
        `<dd>${fieldValue(key, result)}</dd></div>`,
    )
    .join("");
  return `<dl class="result-fields">${rows}</dl>`;
}

/**
 * Per-class displacement bars.  Bar heights are proportional to the exact
 * delta norms; classes outside the targeted set carry data-value="0".
 */
export function deltaBarsHtml(result: ResultPayload, classNames: string[]): string {
  const max = Math.max(...result.delta_norms, 1e-12);
  const width = 26;
  const bars = result.delta_norms
    .map((value, i) => {
      const height = Math.round((value / max) * 90);
      const x = i * width;
      const targeted = result.target_regions.includes(i + 1);
      return (
        `<g class="bar${targeted ? " targeted" : ""}" data-class="${i + 1}" ` +
        `data-value="${value}">` +
        `<rect x="${x + 3}" y="${100 - height}" width="${width - 6}" height="${height}" ` +
        `fill="${classColor(i + 1)}"></rect>` +
        `<text x="${x + width / 2}" y="112" text-anchor="middle">${esc(
          classNames[i] ?? i + 1,
        )}</text></g>`
      );
    })
    .join("");
  return (
    `<svg class="delta-bars" viewBox="0 0 ${result.delta_norms.length * width} 118" ` +
    `role="img" aria-label="per-region code displacement">${bars}</svg>`
  );
}

/** Decision-loss sparkline with the counter-class probability overlaid. */
export function trajectorySparklineHtml(result: ResultPayload): string {
  const n = result.loss_trajectory.length;
  if (n === 0) return `<svg class="sparkline" viewBox="0 0 100 40"></svg>`;
  const losses = result.loss_trajectory.map((pair) => pair[0]);
  const maxLoss = Math.max(...losses, 1e-12);
  const w = 220;
  const h = 48;
  const pt = (i: number, v: number, vmax: number) =>
    `${((i / Math.max(n - 1, 1)) * w).toFixed(1)},${(h - (v / vmax) * h).toFixed(1)}`;
  const lossLine = losses.map((v, i) => pt(i, v, maxLoss)).join(" ");
  const probLine = result.prob_trajectory.map((v, i) => pt(i, v, 1)).join(" ");
  return (
    `<svg class="sparkline" viewBox="0 0 ${w} ${h}" preserveAspectRatio="none">` +
    `<polyline class="loss" points="${lossLine}" fill="none" stroke="#a84848"></polyline>` +
    `<polyline class="prob" points="${probLine}" fill="none" stroke="#48a860"></polyline>` +
    `</svg>`
  );
}

/** Query / reconstruction / counterfactual triptych from job artifacts. */
export function triptychHtml(
  job: JobPayload,
  artifactUrl: (relative: string) => string,
): string {
  const urls = job.artifact_urls ?? {};
  const panel = (name: string, title: string) =>
    urls[name]
      ? `<figure><img src="${esc(artifactUrl(urls[name]))}" alt="${esc(title)}">` +
        `<figcaption>${esc(title)}</figcaption></figure>`
      : "";
  return (
    `<div class="triptych">` +
    panel("query.png", "query") +
    panel("reconstruction.png", "reconstruction") +
    panel("counterfactual.png", "counterfactual") +
    `</div>`
  );
}

export function errorCardHtml(job: JobPayload): string {
  const err = job.error ?? { error_class: "UnknownError", message: "" };
  const step = err.step !== undefined && err.step !== null ? ` at step ${err.step}` : "";
  return (
    `<div class="error-card" data-job="${esc(job.job_id)}">` +
    `<strong>${esc(err.error_class)}</strong>${esc(step)}<p>${esc(err.message)}</p>` +
    `<button class="retry" data-retry="${esc(job.job_id)}">retry</button></div>`
  );
}

/** Full panel for one finished (or failed/pending) job. */
export function resultPanelHtml(
  job: JobPayload,
  classNames: string[],
  artifactUrl: (relative: string) => string,
): string {
  if (job.state === "failed") {
    return errorCardHtml(job);
  }
  if (job.state !== "done" || !job.result) {
    return `<div class="pending-card" data-job="${esc(job.job_id)}">job ${esc(
      job.job_id,
    )}: ${esc(job.state)} ...</div>`;
  }
  const r = job.result;
  const verdict = r.success
    ? `flipped to class ${r.counter_class} (P=${r.final_counter_prob.toFixed(3)})`
    : `did NOT flip (P=${r.final_counter_prob.toFixed(3)})`;
  return (
    `<article class="result-panel" data-job="${esc(job.job_id)}">` +
    `<header class="${r.success ? "ok" : "bad"}">${esc(verdict)}</header>` +
    triptychHtml(job, artifactUrl) +
    deltaBarsHtml(r, classNames) +
    trajectorySparklineHtml(r) +
    resultFieldsHtml(r) +
    `</article>`
  );
}
