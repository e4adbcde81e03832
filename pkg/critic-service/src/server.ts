/** HTTP critic service speaking wire protocol v1.
 *
 * Requests are serialized through a single queue: diffusion inference
 * dominates the cost, so concurrency adds nothing but contention.
 * Classifier-free guidance runs here: eps = eps_u + gs * (eps_c - eps_u),
 * with the unconditional branch prompted by the empty string (gs = 0 is
 * therefore prompt-independent by construction).
 */

import * as http from "node:http";

import { NoisePredictor } from "./backend.js";
import {
  DEFAULT_MAX_PAYLOAD_BYTES,
  ProtocolError,
  encodePredictResponse,
  parsePredictRequest,
} from "./protocol.js";

export interface ServiceConfig {
  backend: NoisePredictor | null;
  port: number;
  maxPayloadBytes?: number;
  guidanceEnabled?: boolean;
}

export function createServer(config: ServiceConfig): http.Server {
  const maxPayload = config.maxPayloadBytes ?? DEFAULT_MAX_PAYLOAD_BYTES;
  const guidance = config.guidanceEnabled ?? true;
  let queue: Promise<void> = Promise.resolve();

  const server = http.createServer((req, res) => {
    if (req.method === "GET" && req.url === "/v1/health") {
      if (!config.backend) {
        return sendJson(res, 503, { status: "loading", model: null });
      }
      return sendJson(res, 200, { status: "ok", model: config.backend.name });
    }
    if (req.method === "POST" && req.url === "/v1/predict_noise") {
      const declared = Number(req.headers["content-length"] ?? 0);
      if (declared > maxPayload) {
        // answer first, then drain, so the client sees the 413 rather
        // than a reset while it is still uploading
        sendJson(res, 413, { error: "payload too large" });
        req.resume();
        return;
      }
      const chunks: Buffer[] = [];
      let received = 0;
      let rejected = false;
      req.on("data", (chunk: Buffer) => {
        if (rejected) {
          return;
        }
        received += chunk.length;
        if (received > maxPayload) {
          rejected = true;
          chunks.length = 0;
          sendJson(res, 413, { error: "payload too large" });
          return;
        }
        chunks.push(chunk);
      });
      req.on("end", () => {
        if (rejected) {
          return;
        }
        const body = Buffer.concat(chunks).toString("utf-8");
        queue = queue.then(() => handlePredict(body, res));
      });
      return;
    }
    sendJson(res, 404, { error: `no route for ${req.method} ${req.url}` });
  });

  function handlePredict(body: string, res: http.ServerResponse): void {
    if (res.writableEnded) {
      return;
    }
    if (!config.backend) {
      return sendJson(res, 503, { error: "model not loaded" });
    }
    const backend = config.backend;
    try {
      const { request, video } = parsePredictRequest(body);
      const elements = request.shape[0] * request.shape[1] * request.shape[2];
      if (elements > backend.maxElements()) {
        throw new ProtocolError(
          `shape [${request.shape}] exceeds the backend limit of ` +
            `${backend.maxElements()} elements`,
          422,
        );
      }
      const conditional = backend.predict(
        video,
        request.shape,
        request.t,
        request.prompt,
      );
      let combined: Float32Array;
      if (guidance) {
        const unconditional = backend.predict(video, request.shape, request.t, "");
        combined = new Float32Array(conditional.length);
        const gs = request.guidance_scale;
        for (let i = 0; i < combined.length; i++) {
          combined[i] = Math.fround(
            unconditional[i] + gs * (conditional[i] - unconditional[i]),
          );
        }
      } else {
        combined = conditional;
      }
      const payload = encodePredictResponse(combined, request.shape);
      res.writeHead(200, {
        "Content-Type": "application/json",
        "Content-Length": Buffer.byteLength(payload),
      });
      res.end(payload);
    } catch (err) {
      if (err instanceof ProtocolError) {
        return sendJson(res, err.status, { error: err.message });
      }
      return sendJson(res, 500, { error: String(err) });
    }
  }

  return server;
}

function sendJson(
  res: http.ServerResponse,
  status: number,
  payload: unknown,
): void {
  if (res.writableEnded) {
    return;
  }
  const body = JSON.stringify(payload);
  res.writeHead(status, {
    "Content-Type": "application/json",
    "Content-Length": Buffer.byteLength(body),
  });
  res.end(body);
}
