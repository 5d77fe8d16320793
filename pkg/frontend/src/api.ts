/** Typed client for the query-service JSON API.
 *
 * Every number shown in the UI originates from one of these responses;
 * the client performs no numerics of its own.
 */

export interface Meta {
  case: string;
  axes: { name: string; bounds: [number, number] }[];
  n_modes: number;
  variables: string[];
  qois: string[];
  amplitudes: { [variable: string]: number[] };
}

export interface EvaluateResponse {
  mu: number[];
  forces: { [tag: string]: [number, number] };
  pressure_drop: number | null;
  u_mag_min: number;
  u_mag_max: number;
}

export interface BoundarySegment {
  tag: string;
  points: [number, number][];
}

export interface FieldResponse {
  mu: number[];
  var: string;
  res: number;
  bbox: [[number, number], [number, number]];
  values: (number | null)[][];
  vmin: number | null;
  vmax: number | null;
  boundary: BoundarySegment[];
}

export interface SurfaceResponse {
  qoi: string;
  grid: number[];
  axes: number[][];
  values: unknown; // nested array, depth = number of axes
}

export class ApiError extends Error {
  constructor(public status: number, message: string) {
    super(message);
  }
}

async function request<T>(url: string, init?: RequestInit): Promise<T> {
  const resp = await fetch(url, init);
  const body = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    throw new ApiError(resp.status, (body as { error?: string }).error ?? resp.statusText);
  }
  return body as T;
}

function post<T>(url: string, payload: unknown): Promise<T> {
  return request<T>(url, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(payload),
  });
}

export class ApiClient {
  constructor(private base = "") {}

  getMeta(): Promise<Meta> {
    return request<Meta>(`${this.base}/api/meta`);
  }

  evaluate(mu: number[]): Promise<EvaluateResponse> {
    return post<EvaluateResponse>(`${this.base}/api/evaluate`, { mu });
  }

  field(mu: number[], variable: string, res: number): Promise<FieldResponse> {
    return post<FieldResponse>(`${this.base}/api/field`, { mu, var: variable, res });
  }

  surface(qoi: string, grid: number[]): Promise<SurfaceResponse> {
    return post<SurfaceResponse>(`${this.base}/api/surface`, { qoi, grid });
  }
}
