// Typed client for the aging service. Endpoints: GET /healthz, GET /zones,
// POST /infer (multipart: "image" file + "request" JSON form field).

export type HealthResponse = {
  status: string;
  checkpoint_sha256?: string;
  registry_sha256?: string;
};

export type ZoneInfo = {
  zone_id: string;
  display_noun: string;
  scale_max: number;
  /** [x0, y0, x1, y1] as fractions of the face image. */
  default_box: [number, number, number, number];
};

export type InferParams = {
  gamma_n: number;
  gamma_inf: number;
  gamma_g: number;
  seed: number;
};

export const DEFAULT_PARAMS: InferParams = {
  gamma_n: 0.2,
  gamma_inf: 40,
  gamma_g: 0.8,
  seed: 0,
};

export type FieldError = { field: string; message: string };

export class ApiError extends Error {
  constructor(
    message: string,
    readonly status: number,
    readonly fieldErrors: FieldError[] = [],
  ) {
    super(message);
    this.name = "ApiError";
  }
}

export type InferResult = {
  blob: Blob;
  seed: string;
  durationMs: number;
  /** Zone -> integer percent the service actually applied. */
  applied: Record<string, number>;
};

export async function fetchHealth(base: string): Promise<HealthResponse> {
  const res = await fetch(`${base}/healthz`);
  return (await res.json()) as HealthResponse;
}

export async function fetchZones(base: string): Promise<ZoneInfo[]> {
  const res = await fetch(`${base}/zones`);
  if (!res.ok) {
    throw new ApiError(`zones request failed (${res.status})`, res.status);
  }
  const payload = (await res.json()) as { zones: ZoneInfo[] };
  return payload.zones;
}

/**
 * Submit a face image plus the serialized request produced by
 * `InferRequest.toWire()`. The wire string is accepted instead of a plain
 * object so unvalidated requests cannot reach this call.
 */
export async function postInfer(
  base: string,
  image: Blob,
  filename: string,
  wireRequest: string,
): Promise<InferResult> {
  const form = new FormData();
  form.append("image", image, filename);
  form.append("request", wireRequest);
  const res = await fetch(`${base}/infer`, { method: "POST", body: form });
  if (!res.ok) {
    throw await errorFromResponse(res);
  }
  return {
    blob: await res.blob(),
    seed: res.headers.get("X-Ldla-Seed") ?? "",
    durationMs: Number(res.headers.get("X-Ldla-Duration-Ms") ?? "0"),
    applied: JSON.parse(res.headers.get("X-Ldla-Applied") ?? "{}"),
  };
}

async function errorFromResponse(res: Response): Promise<ApiError> {
  let fieldErrors: FieldError[] = [];
  try {
    const payload = await res.json();
    if (Array.isArray(payload.errors)) {
      fieldErrors = payload.errors as FieldError[];
    } else if (payload.error_id) {
      return new ApiError(`server error (id ${payload.error_id})`, res.status);
    }
  } catch {
    // non-JSON body; fall through to the generic message
  }
  const detail = fieldErrors.map((e) => `${e.field}: ${e.message}`).join("; ");
  return new ApiError(
    detail || `request failed (${res.status})`,
    res.status,
    fieldErrors,
  );
}
