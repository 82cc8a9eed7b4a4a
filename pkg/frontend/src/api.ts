/**
 * Typed client for the steexlab HTTP API.
 *
 * The frontend is a thin client: every number it displays comes from these
 * payloads; it never recomputes model math.
 */

export interface OptimizerConfig {
  lambda_weight: number;
  learning_rate: number;
  num_steps: number;
  seed: number;
}

export interface ResultPayload {
  schema: string;
  final_codes: { codes: number[][]; present_classes: number[] };
  query_codes: { codes: number[][]; present_classes: number[] };
  delta_norms: number[];
  loss_trajectory: [number, number][];
  prob_trajectory: number[];
  success: boolean;
  counter_class: number;
  final_counter_prob: number;
  first_flip_step: number | null;
  model_id: string;
  optimizer: OptimizerConfig;
  target_regions: number[];
  artifacts?: Record<string, string>;
}

export interface JobPayload {
  job_id: string;
  state: "queued" | "running" | "done" | "failed";
  request: Record<string, unknown>;
  error: { error_class: string; message: string; step?: number } | null;
  result: ResultPayload | null;
  artifact_urls: Record<string, string> | null;
}

export interface DatasetItemPayload {
  index: number;
  image_png_base64: string;
  mask_png_base64: string;
  mask_labels: number[][];
  present_classes: number[];
  class_names: string[];
  label: number | null;
  predicted: boolean;
}

export interface ModelEntry {
  model_id: string;
  kind: string;
  path: string;
  digest: string;
  status: string;
}

export interface ExplainRequestBody {
  model: string;
  stack: { segmenter: string; autoencoder: string };
  image: { dataset: string; index: number } | { png_base64: string };
  counter_class?: number | string | null;
  target_regions?: (number | string)[] | null;
  optimizer?: Partial<OptimizerConfig>;
}

export class ApiError extends Error {
  constructor(public status: number, detail: string) {
    super(detail);
  }
}

async function asJson<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = response.statusText;
    try {
      detail = ((await response.json()) as { detail?: string }).detail ?? detail;
    } catch {
      /* non-JSON error body */
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class Client {
  constructor(
    private base: string = "",
    private fetchFn: typeof fetch = fetch.bind(globalThis),
  ) {}

  listModels(): Promise<{ models: ModelEntry[] }> {
    return this.fetchFn(`${this.base}/api/models`).then((r) => asJson(r));
  }

  datasetItem(dataset: string, index: number, segmenter?: string): Promise<DatasetItemPayload> {
    const query = segmenter ? `?segmenter=${encodeURIComponent(segmenter)}` : "";
    return this.fetchFn(`${this.base}/api/datasets/${dataset}/items/${index}${query}`).then(
      (r) => asJson(r),
    );
  }

  submitExplain(body: ExplainRequestBody): Promise<{ job_id: string }> {
    return this.fetchFn(`${this.base}/api/jobs/explain`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    }).then((r) => asJson(r));
  }

  job(jobId: string): Promise<JobPayload> {
    return this.fetchFn(`${this.base}/api/jobs/${jobId}`).then((r) => asJson(r));
  }

  artifactUrl(relative: string): string {
    return `${this.base}${relative}`;
  }

  /**
   * Poll a job until it reaches a terminal state.  1s interval with gentle
   * backoff, capped at 5s, matching the service's polling-only contract.
   */
  async waitForJob(
    jobId: string,
    onUpdate?: (job: JobPayload) => void,
    sleep: (ms: number) => Promise<void> = (ms) => new Promise((res) => setTimeout(res, ms)),
  ): Promise<JobPayload> {
    let interval = 1000;
    for (;;) {
      const payload = await this.job(jobId);
      onUpdate?.(payload);
      if (payload.state === "done" || payload.state === "failed") {
        return payload;
      }
      await sleep(interval);
      interval = Math.min(interval * 1.5, 5000);
    }
  }
}
