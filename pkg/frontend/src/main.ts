/**
 * Browser wiring: one store, one render loop, the service as single source
 * of truth.  Sessions live in the URL hash; jobs referenced there are
 * refetched on load, so a shared link re-renders the same exploration.
 */

import { Client, DatasetItemPayload, JobPayload } from "./api.js";
import { classAt, legendEntries, overlayPixels } from "./mask.js";
import { resultPanelHtml } from "./panels.js";
import {
  DEFAULT_SESSION,
  SessionState,
  recordJob,
  sessionFromUrlHash,
  sessionToUrlHash,
  setItem,
  toggleRegion,
} from "./state.js";

const apiBase =
  new URLSearchParams(window.location.search).get("api") ??
  (window as { STEEXLAB_API_BASE?: string }).STEEXLAB_API_BASE ??
  "";
const client = new Client(apiBase);

let session: SessionState = window.location.hash.length > 1
  ? sessionFromUrlHash(window.location.hash)
  : { ...DEFAULT_SESSION };
let currentItem: DatasetItemPayload | null = null;
const jobCache = new Map<string, JobPayload>();

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

function setSession(next: SessionState): void {
  session = next;
  const hash = sessionToUrlHash(session);
  if (window.location.hash !== hash) {
    history.replaceState(null, "", hash);
  }
  render();
}

async function loadItem(index: number): Promise<void> {
  const item = await client.datasetItem(session.dataset, index, session.segmenter);
  currentItem = item;
  setSession(setItem(session, index, item.present_classes));
}

async function refreshJobs(): Promise<void> {
  await Promise.all(
    session.jobIds.map(async (id) => {
      try {
        jobCache.set(id, await client.job(id));
      } catch {
        /* job may belong to another home dir; leave a gap */
      }
    }),
  );
  render();
}

async function launch(): Promise<void> {
  if (session.itemIndex === null) return;
  const body = {
    model: session.model,
    stack: { segmenter: session.segmenter, autoencoder: session.autoencoder },
    image: { dataset: session.dataset, index: session.itemIndex },
    counter_class: session.counterClass,
    target_regions: session.regions.length ? session.regions : null,
    optimizer: {
      lambda_weight: session.lambda,
      num_steps: session.steps,
      seed: session.seed,
    },
  };
  try {
    const { job_id } = await client.submitExplain(body);
    setSession(recordJob(session, job_id));
    const final = await client.waitForJob(job_id, (job) => {
      jobCache.set(job_id, job);
      render();
    });
    jobCache.set(job_id, final);
    render();
  } catch (err) {
    $("launch-error").textContent = String(err);
  }
}

function drawScene(): void {
  const canvas = $("scene") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx || !currentItem) return;
  const img = new Image();
  img.onload = () => {
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
    const labels = currentItem!.mask_labels;
    const overlay = overlayPixels(labels, session.regions);
    const tile = new OffscreenCanvas(labels[0].length, labels.length);
    const tctx = tile.getContext("2d")!;
    tctx.putImageData(new ImageData(overlay, labels[0].length, labels.length), 0, 0);
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(tile, 0, 0, canvas.width, canvas.height);
  };
  img.src = `data:image/png;base64,${currentItem.image_png_base64}`;
}

function render(): void {
  $("item-index").textContent =
    session.itemIndex === null ? "none" : `#${session.itemIndex}`;
  ($("lambda") as HTMLInputElement).value = String(session.lambda);
  ($("steps") as HTMLInputElement).value = String(session.steps);
  ($("seed") as HTMLInputElement).value = String(session.seed);

  if (currentItem) {
    const legend = legendEntries(
      currentItem.present_classes,
      currentItem.class_names,
      session.regions,
    );
    $("legend").innerHTML = legend
      .map(
        (entry) =>
          `<li data-class="${entry.classIndex}" class="${entry.selected ? "selected" : ""}">` +
          `<span class="swatch" style="background:${entry.color}"></span>${entry.name}</li>`,
      )
      .join("");
    drawScene();
  }
  $("regions-readout").textContent = session.regions.length
    ? `targeted: {${session.regions.join(", ")}}`
    : "targeted: all regions (none selected = unrestricted)";

  const classNames = currentItem?.class_names ?? [];
  $("results").innerHTML = [...session.jobIds]
    .reverse()
    .map((id) => {
      const job = jobCache.get(id);
      if (!job) return `<div class="pending-card">job ${id}: loading ...</div>`;
      return resultPanelHtml(job, classNames, (rel) => client.artifactUrl(rel));
    })
    .join("");
}

function bind(): void {
  ($("scene") as HTMLCanvasElement).addEventListener("click", (event) => {
    if (!currentItem) return;
    const canvas = event.currentTarget as HTMLCanvasElement;
    const rect = canvas.getBoundingClientRect();
    const cls = classAt(
      currentItem.mask_labels,
      event.clientX - rect.left,
      event.clientY - rect.top,
      rect.width,
      rect.height,
    );
    if (cls !== null) setSession(toggleRegion(session, cls));
  });
  $("legend").addEventListener("click", (event) => {
    const target = (event.target as HTMLElement).closest("li");
    if (target) setSession(toggleRegion(session, Number(target.dataset.class)));
  });
  $("load-item").addEventListener("click", () => {
    const index = parseInt(($("item-input") as HTMLInputElement).value, 10);
    if (!Number.isNaN(index)) void loadItem(index);
  });
  $("launch").addEventListener("click", () => void launch());
  ($("lambda") as HTMLInputElement).addEventListener("change", (e) =>
    setSession({ ...session, lambda: parseFloat((e.target as HTMLInputElement).value) }),
  );
  ($("steps") as HTMLInputElement).addEventListener("change", (e) =>
    setSession({ ...session, steps: parseInt((e.target as HTMLInputElement).value, 10) }),
  );
  ($("seed") as HTMLInputElement).addEventListener("change", (e) =>
    setSession({ ...session, seed: parseInt((e.target as HTMLInputElement).value, 10) }),
  );
  $("results").addEventListener("click", (event) => {
    const retry = (event.target as HTMLElement).dataset.retry;
    if (retry) void launch();
  });
}

async function start(): Promise<void> {
  bind();
  if (session.itemIndex !== null) {
    await loadItem(session.itemIndex);
  }
  await refreshJobs();
  render();
}

void start();
