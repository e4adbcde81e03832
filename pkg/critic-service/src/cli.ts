/** Entry point: critic-service --model stub --port 8731 [--device cpu]
 *
 * The device flag is accepted for interface parity with GPU backends;
 * the stub backend ignores it. Model load failures exit nonzero before
 * the server binds.
 */

import { loadBackend } from "./backend.js";
import { createServer } from "./server.js";
import { DEFAULT_MAX_PAYLOAD_BYTES } from "./protocol.js";

interface CliOptions {
  model: string;
  port: number;
  device: string;
  maxPayload: number;
}

function parseArgs(argv: string[]): CliOptions {
  const options: CliOptions = {
    model: "stub",
    port: 8731,
    device: "cpu",
    maxPayload: DEFAULT_MAX_PAYLOAD_BYTES,
  };
  for (let i = 0; i < argv.length; i += 2) {
    const flag = argv[i];
    const value = argv[i + 1];
    if (value === undefined) {
      throw new Error(`missing value for ${flag}`);
    }
    switch (flag) {
      case "--model":
        options.model = value;
        break;
      case "--port":
        options.port = Number(value);
        break;
      case "--device":
        options.device = value;
        break;
      case "--max-payload":
        options.maxPayload = Number(value);
        break;
      default:
        throw new Error(`unknown flag ${flag}`);
    }
  }
  if (!Number.isInteger(options.port) || options.port < 0 || options.port > 65535) {
    throw new Error(`invalid port ${options.port}`);
  }
  return options;
}

function main(): void {
  let options: CliOptions;
  try {
    options = parseArgs(process.argv.slice(2));
  } catch (err) {
    console.error(`critic-service: ${String(err)}`);
    process.exit(2);
  }
  let backend;
  try {
    backend = loadBackend(options.model);
  } catch (err) {
    console.error(`critic-service: model load failed: ${String(err)}`);
    process.exit(1);
  }
  const server = createServer({
    backend,
    port: options.port,
    maxPayloadBytes: options.maxPayload,
  });
  server.on("error", (err) => {
    console.error(`critic-service: ${String(err)}`);
    process.exit(1);
  });
  server.listen(options.port, "127.0.0.1", () => {
    const addr = server.address();
    const port = typeof addr === "object" && addr ? addr.port : options.port;
    console.log(
      `critic-service: model=${backend.name} listening on http://127.0.0.1:${port}`,
    );
  });
}

main();
