import { describe, expect, it } from "vitest";

import { ApiError, Client, JobPayload } from "../src/api.js";

function fakeFetch(routes: Record<string, () => { status: number; body: unknown }>) {
  const calls: string[] = [];
  const fn = (async (input: RequestInfo | URL) => {
    const url = String(input);
    calls.push(url);
    const key = Object.keys(routes).find((k) => url.endsWith(k));
    if (!key) return new Response("{}", { status: 404 });
    const { status, body } = routes[key]();
    return new Response(JSON.stringify(body), {
      status,
      headers: { "content-type": "application/json" },
    });
  }) as typeof fetch;
  return { fn, calls };
}

const jobTemplate: JobPayload = {
  job_id: "j1",
  state: "queued",
  request: {},
  error: null,
  result: null,
  artifact_urls: null,
};

describe("client", () => {
  it("polls until the job is terminal, with backoff", async () => {
    const states: JobPayload["state"][] = ["queued", "running", "running", "done"];
    let i = 0;
    const { fn } = fakeFetch({
      "/api/jobs/j1": () => ({ status: 200, body: { ...jobTemplate, state: states[i++] } }),
    });
    const sleeps: number[] = [];
    const client = new Client("http://x", fn);
    const seen: string[] = [];
    const final = await client.waitForJob(
      "j1",
      (job) => seen.push(job.state),
      async (ms) => {
        sleeps.push(ms);
      },
    );
    expect(final.state).toBe("done");
    expect(seen).toEqual(["queued", "running", "running", "done"]);
    expect(sleeps).toEqual([1000, 1500, 2250]);
  });

  it("raises ApiError with the service detail message", async () => {
    const { fn } = fakeFetch({
      "/api/jobs/explain": () => ({ status: 400, body: { detail: "unknown model 'x'" } }),
    });
    const client = new Client("http://x", fn);
    await expect(
      client.submitExplain({
        model: "x",
        stack: { segmenter: "s", autoencoder: "a" },
        image: { dataset: "d", index: 0 },
      }),
    ).rejects.toThrowError(ApiError);
    await expect(
      client.submitExplain({
        model: "x",
        stack: { segmenter: "s", autoencoder: "a" },
        image: { dataset: "d", index: 0 },
      }),
    ).rejects.toThrow("unknown model 'x'");
  });

  it("builds artifact URLs against the API base", () => {
    const client = new Client("http://host:1234");
    expect(client.artifactUrl("/api/jobs/j/artifacts/counterfactual.png")).toBe(
      "http://host:1234/api/jobs/j/artifacts/counterfactual.png",
    );
  });
});
