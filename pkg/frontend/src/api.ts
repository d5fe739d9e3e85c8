/**
 * Typed client for the attrdelta control service.
 *
 * All endpoints are plain JSON over fetch.  Generation and sweeps are
 * asynchronous on the server: POST returns 202 with a job id, and the client
 * polls the job until it settles.  Polling accepts an AbortSignal so a
 * superseded request (e.g. the user moved a slider again) can be dropped
 * without waiting for the old job.
 */

export interface ApplicationSpec {
  delta: string;
  subject_word: string;
  scale: number;
  occurrence: number | "all";
  delay_steps: number;
}

export interface GenerateRequest {
  prompt: string;
  seed: number | null;
  steps: number;
  guidance_weight: number;
  applications: ApplicationSpec[];
}

export interface SweepAxisSpec {
  delta: string;
  subject_word: string;
  scales: number[];
  occurrence: number | "all";
  delay_steps: number;
}

export interface SweepRequest {
  prompt: string;
  seed: number | null;
  steps: number;
  guidance_weight: number;
  axes: SweepAxisSpec[];
}

export interface JobAccepted {
  job_id: string;
  kind: "generate" | "sweep";
  seed: number;
  status_url: string;
}

export interface CellInfo {
  index: number;
  scales: number[];
  unmodified: boolean;
  image_url: string;
}

export interface JobStatus {
  job_id: string;
  kind: "generate" | "sweep";
  state: "queued" | "running" | "done" | "failed";
  seed: number;
  error?: string | null;
  provenance?: Record<string, unknown> | null;
  image_url?: string | null;
  cells?: CellInfo[] | null;
}

export interface DeltaInfo {
  key: string;
  name: string;
  encoder_id: string;
  method: string;
  embedding_dim: number;
  training_nouns: string[];
  config_digest: string;
  created_at: string;
}

export interface DeltasResponse {
  deltas: DeltaInfo[];
  warnings: string[];
  backbone_id: string;
  encoder_id: string;
}

/** Error carrying the HTTP status and the service's detail message. */
export class ApiError extends Error {
  constructor(
    readonly status: number,
    message: string,
  ) {
    super(message);
    this.name = "ApiError";
  }
}

/** Raised when a polled job settles in the "failed" state. */
export class JobFailedError extends Error {
  constructor(
    readonly jobId: string,
    message: string,
  ) {
    super(message);
    this.name = "JobFailedError";
  }
}

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  signal?: AbortSignal;
}

function sleep(ms: number, signal?: AbortSignal): Promise<void> {
  return new Promise((resolve, reject) => {
    const timer = setTimeout(() => {
      signal?.removeEventListener("abort", onAbort);
      resolve();
    }, ms);
    function onAbort() {
      clearTimeout(timer);
      reject(new DOMException("aborted", "AbortError"));
    }
    signal?.addEventListener("abort", onAbort, { once: true });
  });
}

async function detailOf(resp: Response): Promise<string> {
  try {
    const body = (await resp.json()) as { detail?: unknown };
    if (typeof body.detail === "string") return body.detail;
    if (body.detail !== undefined) return JSON.stringify(body.detail);
  } catch {
    // non-JSON body; fall through to the status line
  }
  return `HTTP ${resp.status}`;
}

export class ControlServiceClient {
  constructor(
    readonly baseUrl = "",
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const resp = await this.fetchFn(this.baseUrl + path, init);
    if (!resp.ok) throw new ApiError(resp.status, await detailOf(resp));
    return (await resp.json()) as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/api/health");
  }

  listDeltas(): Promise<DeltasResponse> {
    return this.request("/api/deltas");
  }

  generate(req: GenerateRequest, signal?: AbortSignal): Promise<JobAccepted> {
    return this.request("/api/generate", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
      signal,
    });
  }

  sweep(req: SweepRequest, signal?: AbortSignal): Promise<JobAccepted> {
    return this.request("/api/sweep", {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
      signal,
    });
  }

  job(jobId: string, signal?: AbortSignal): Promise<JobStatus> {
    return this.request(`/api/jobs/${jobId}`, { signal });
  }

  /** Fetch the PNG behind an image_url returned by the service. */
  async imageBytes(imageUrl: string, signal?: AbortSignal): Promise<ArrayBuffer> {
    const resp = await this.fetchFn(this.baseUrl + imageUrl, { signal });
    if (!resp.ok) throw new ApiError(resp.status, await detailOf(resp));
    return resp.arrayBuffer();
  }

  /** Absolute URL for an image path, usable as an <img> src. */
  imageSrc(imageUrl: string): string {
    return this.baseUrl + imageUrl;
  }

  /**
   * Poll a job until it is done.  Throws JobFailedError if the job fails,
   * an AbortError if the signal fires, and a plain Error on timeout.
   */
  async pollJob(jobId: string, opts: PollOptions = {}): Promise<JobStatus> {
    const { intervalMs = 150, timeoutMs = 30_000, signal } = opts;
    const deadline = Date.now() + timeoutMs;
    for (;;) {
      if (signal?.aborted) throw new DOMException("aborted", "AbortError");
      const status = await this.job(jobId, signal);
      if (status.state === "done") return status;
      if (status.state === "failed") {
        throw new JobFailedError(jobId, status.error ?? "job failed");
      }
      if (Date.now() >= deadline) {
        throw new Error(`job ${jobId} still ${status.state} after ${timeoutMs}ms`);
      }
      await sleep(intervalMs, signal);
    }
  }
}
