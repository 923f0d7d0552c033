/** Typed HTTP client for the morphism session service. */

export interface SessionSummary {
  session_id: string;
  revision: number;
  n_regions: number;
  n_classes: number;
  accuracy: number;
  dataset: string;
  n_points: number;
}

export interface RegionReport {
  region: number;
  class_label: number;
  count: number;
  empty: boolean;
  accuracy: number | null;
  medoid: number[] | null;
  nearest_to_center: number[] | null;
}

export interface SessionState {
  revision: number;
  accuracy: number;
  bounds: [[number, number], [number, number]];
  grid: number;
  centers: number[][];
  region_classes: number[];
  region_raster: number[][];
  class_raster: number[][];
  region_report: RegionReport[];
  points: number[][];
  labels: number[];
}

export interface TrainResult {
  accuracy_before: number;
  accuracy_after: number;
  revision: number;
}

export type MorphOp =
  | { op: "add"; x: number; y: number; class_label: number }
  | { op: "remove"; region_id: number };

export class StaleRevisionError extends Error {
  constructor(message: string) {
    super(message);
    this.name = "StaleRevisionError";
  }
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

export type FetchLike = (
  url: string,
  init?: { method?: string; headers?: Record<string, string>; body?: string },
) => Promise<{ status: number; json(): Promise<unknown> }>;

export class MorphClient {
  constructor(
    private baseUrl: string,
    private fetchFn: FetchLike = fetch as unknown as FetchLike,
  ) {}

  private async request<T>(
    method: string,
    path: string,
    body?: unknown,
  ): Promise<T> {
    const res = await this.fetchFn(this.baseUrl + path, {
      method,
      headers: body ? { "Content-Type": "application/json" } : undefined,
      body: body ? JSON.stringify(body) : undefined,
    });
    if (res.status === 409) {
      const detail = await res.json().catch(() => ({}));
      throw new StaleRevisionError(JSON.stringify(detail));
    }
    if (res.status >= 400) {
      const detail = await res.json().catch(() => ({}));
      throw new ApiError(res.status, JSON.stringify(detail));
    }
    if (res.status === 204) {
      return undefined as T;
    }
    return (await res.json()) as T;
  }

  createSession(spec: {
    dataset?: string;
    csv?: string;
    seed?: number;
    regions?: number;
    train_steps?: number;
  }): Promise<SessionSummary> {
    return this.request("POST", "/sessions", spec);
  }

  getState(sessionId: string, grid = 200): Promise<SessionState> {
    return this.request("GET", `/sessions/${sessionId}/state?grid=${grid}`);
  }

  morph(
    sessionId: string,
    op: MorphOp,
    expectedRevision: number,
  ): Promise<SessionSummary> {
    return this.request("POST", `/sessions/${sessionId}/morph`, {
      ...op,
      expected_revision: expectedRevision,
    });
  }

  train(sessionId: string, steps: number): Promise<TrainResult> {
    return this.request("POST", `/sessions/${sessionId}/train`, { steps });
  }

  deleteSession(sessionId: string): Promise<unknown> {
    return this.request("DELETE", `/sessions/${sessionId}`);
  }
}
