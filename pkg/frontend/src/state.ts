/**
 * Exploration session state: pure reducers plus URL (de)serialization.
 *
 * The region set is always a subset of the classes present in the current
 * mask; toggling an absent class is a no-op.  The whole session (minus
 * fetched payloads, which are reloaded from their persisted jobs) fits in
 * the URL hash, so a copied link restores the same exploration.
 */

export interface SessionState {
  dataset: string;
  itemIndex: number | null;
  model: string;
  segmenter: string;
  autoencoder: string;
  lambda: number;
  steps: number;
  seed: number;
  counterClass: number | null;
  regions: number[];
  presentClasses: number[];
  jobIds: string[];
}

export const DEFAULT_SESSION: SessionState = {
  dataset: "val",
  itemIndex: null,
  model: "clf_full",
  segmenter: "seg",
  autoencoder: "ae",
  lambda: 0.3,
  steps: 100,
  seed: 0,
  counterClass: null,
  regions: [],
  presentClasses: [],
  jobIds: [],
};

function sortedUnique(values: number[]): number[] {
  return [...new Set(values)].sort((a, b) => a - b);
}

/** Toggle one semantic class in the target set; absent classes are inert. */
export function toggleRegion(state: SessionState, classIndex: number): SessionState {
  if (!state.presentClasses.includes(classIndex)) {
    return state;
  }
  const regions = state.regions.includes(classIndex)
    ? state.regions.filter((c) => c !== classIndex)
    : sortedUnique([...state.regions, classIndex]);
  return { ...state, regions };
}

/** Select a dataset item; the region set is pruned to the new mask's classes. */
export function setItem(
  state: SessionState,
  itemIndex: number,
  presentClasses: number[],
): SessionState {
  const present = sortedUnique(presentClasses);
  return {
    ...state,
    itemIndex,
    presentClasses: present,
    regions: state.regions.filter((c) => present.includes(c)),
  };
}

export function setLambda(state: SessionState, lambda: number): SessionState {
  return { ...state, lambda };
}

export function setCounterClass(state: SessionState, counterClass: number | null): SessionState {
  return { ...state, counterClass };
}

export function recordJob(state: SessionState, jobId: string): SessionState {
  if (state.jobIds.includes(jobId)) {
    return state;
  }
  return { ...state, jobIds: [...state.jobIds, jobId] };
}

export function sessionToUrlHash(state: SessionState): string {
  const params = new URLSearchParams();
  params.set("dataset", state.dataset);
  if (state.itemIndex !== null) params.set("item", String(state.itemIndex));
  params.set("model", state.model);
  params.set("segmenter", state.segmenter);
  params.set("autoencoder", state.autoencoder);
  params.set("lambda", String(state.lambda));
  params.set("steps", String(state.steps));
  params.set("seed", String(state.seed));
  if (state.counterClass !== null) params.set("counter", String(state.counterClass));
  if (state.regions.length) params.set("regions", state.regions.join(","));
  if (state.presentClasses.length) params.set("present", state.presentClasses.join(","));
  if (state.jobIds.length) params.set("jobs", state.jobIds.join(","));
  return `#${params.toString()}`;
}

export function sessionFromUrlHash(hash: string): SessionState {
  const params = new URLSearchParams(hash.replace(/^#/, ""));
  const ints = (key: string): number[] =>
    (params.get(key) ?? "")
      .split(",")
      .filter((tok) => tok.length > 0)
      .map((tok) => parseInt(tok, 10));
  const state: SessionState = {
    ...DEFAULT_SESSION,
    dataset: params.get("dataset") ?? DEFAULT_SESSION.dataset,
    itemIndex: params.has("item") ? parseInt(params.get("item")!, 10) : null,
    model: params.get("model") ?? DEFAULT_SESSION.model,
    segmenter: params.get("segmenter") ?? DEFAULT_SESSION.segmenter,
    autoencoder: params.get("autoencoder") ?? DEFAULT_SESSION.autoencoder,
    lambda: params.has("lambda") ? parseFloat(params.get("lambda")!) : DEFAULT_SESSION.lambda,
    steps: params.has("steps") ? parseInt(params.get("steps")!, 10) : DEFAULT_SESSION.steps,
    seed: params.has("seed") ? parseInt(params.get("seed")!, 10) : DEFAULT_SESSION.seed,
    counterClass: params.has("counter") ? parseInt(params.get("counter")!, 10) : null,
    regions: ints("regions"),
    presentClasses: ints("present"),
    jobIds: (params.get("jobs") ?? "").split(",").filter((tok) => tok.length > 0),
  };
  // enforce the subset invariant on whatever the URL carried
  state.regions = state.regions.filter((c) => state.presentClasses.includes(c));
  return state;
}
