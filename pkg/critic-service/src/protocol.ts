/** Wire protocol v1 shared by the optimizer and the critic service.
 *
 * POST /v1/predict_noise
 *   { version: "1", t: int, prompt: string, guidance_scale: number,
 *     shape: [k, h, w], data_b64: base64 of little-endian float32,
 *     row-major (k, h, w) }
 * -> { version: "1", shape: [k, h, w], data_b64: ... }
 *
 * GET /v1/health -> { status: "ok", model: string }
 */

export const PROTOCOL_VERSION = "1";
export const DEFAULT_MAX_PAYLOAD_BYTES = 64 * 1024 * 1024;

export interface PredictRequest {
  version: string;
  t: number;
  prompt: string;
  guidance_scale: number;
  shape: [number, number, number];
  data_b64: string;
}

export interface PredictResponse {
  version: string;
  shape: [number, number, number];
  data_b64: string;
}

export class ProtocolError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

export function parsePredictRequest(body: string): {
  request: PredictRequest;
  video: Float32Array;
} {
  let parsed: unknown;
  try {
    parsed = JSON.parse(body);
  } catch {
    throw new ProtocolError("request body is not valid JSON", 400);
  }
  const req = parsed as Partial<PredictRequest>;
  if (req.version !== PROTOCOL_VERSION) {
    throw new ProtocolError(
      `unsupported protocol version ${JSON.stringify(req.version)}`,
      400,
    );
  }
  if (!Number.isInteger(req.t)) {
    throw new ProtocolError("t must be an integer timestep", 400);
  }
  if (typeof req.prompt !== "string") {
    throw new ProtocolError("prompt must be a string", 400);
  }
  if (typeof req.guidance_scale !== "number" || !isFinite(req.guidance_scale)) {
    throw new ProtocolError("guidance_scale must be a finite number", 400);
  }
  if (
    !Array.isArray(req.shape) ||
    req.shape.length !== 3 ||
    !req.shape.every((v) => Number.isInteger(v) && v > 0)
  ) {
    throw new ProtocolError("shape must be three positive integers", 400);
  }
  if (typeof req.data_b64 !== "string") {
    throw new ProtocolError("data_b64 must be a string", 400);
  }
  const video = decodeTensor(req.data_b64, req.shape as [number, number, number]);
  return { request: req as PredictRequest, video };
}

export function decodeTensor(
  dataB64: string,
  shape: [number, number, number],
): Float32Array {
  const expected = shape[0] * shape[1] * shape[2] * 4;
  const raw = Buffer.from(dataB64, "base64");
  if (raw.length !== expected) {
    throw new ProtocolError(
      `payload is ${raw.length} bytes but shape [${shape}] needs ${expected}`,
      422,
    );
  }
  // copy so the view owns aligned memory regardless of the buffer pool
  const bytes = new Uint8Array(raw.length);
  bytes.set(raw);
  return new Float32Array(bytes.buffer);
}

export function encodeTensor(data: Float32Array): string {
  return Buffer.from(data.buffer, data.byteOffset, data.byteLength).toString(
    "base64",
  );
}

export function encodePredictResponse(
  data: Float32Array,
  shape: [number, number, number],
): string {
  const response: PredictResponse = {
    version: PROTOCOL_VERSION,
    shape,
    data_b64: encodeTensor(data),
  };
  return JSON.stringify(response);
}
