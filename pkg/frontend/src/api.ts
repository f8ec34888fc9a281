// Typed client for the face-generation HTTP API.

export interface AttributeEntry {
  name: string;
  phrasings: string[];
}

export interface AttributeSchema {
  schema_version: number;
  names: string[];
  neutral: string;
  attributes: AttributeEntry[];
  exclusive_pairs: string[][];
}

export interface GenerateRequest {
  caption: string;
  seed?: number | null;
  samples?: number;
}

export interface GeneratedSample {
  png_base64: string;
  reconstructed_caption: string;
  recovered_attributes: Record<string, boolean>;
  attribute_diff: Record<string, boolean>;
}

export interface GenerateResponse {
  samples: GeneratedSample[];
  seed: number;
  requested_attributes: Record<string, boolean>;
  embedding_norm: number;
  model_hash: string;
}

export interface HealthResponse {
  model_hash: string;
  uptime_s: number;
}

export interface ValidationDetail {
  field: string;
  message: string;
}

export class ApiError extends Error {
  status: number;
  detail: ValidationDetail[];

  constructor(status: number, message: string, detail: ValidationDetail[] = []) {
    super(message);
    this.status = status;
    this.detail = detail;
  }
}

async function parseJson<T>(res: Response): Promise<T> {
  if (!res.ok) {
    let detail: ValidationDetail[] = [];
    let message = `request failed with status ${res.status}`;
    try {
      const body = await res.json();
      if (Array.isArray(body.detail)) detail = body.detail;
      if (body.error) message = `${body.error} (${res.status})`;
    } catch {
      // non-JSON error body; keep the status message
    }
    throw new ApiError(res.status, message, detail);
  }
  return (await res.json()) as T;
}

export class ApiClient {
  readonly base: string;

  constructor(base = "") {
    this.base = base.replace(/\/$/, "");
  }

  async health(): Promise<HealthResponse> {
    return parseJson(await fetch(`${this.base}/api/health`));
  }

  async attributes(): Promise<AttributeSchema> {
    return parseJson(await fetch(`${this.base}/api/attributes`));
  }

  async generate(req: GenerateRequest): Promise<GenerateResponse> {
    const res = await fetch(`${this.base}/api/generate`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(req),
    });
    return parseJson(res);
  }
}
