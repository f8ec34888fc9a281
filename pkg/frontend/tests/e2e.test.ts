// End-to-end round trip against a live `cycleface serve` instance.
// Spawns the service on a scratch checkpoint, so it needs python3 with
// the package installed on PATH.

import { spawn, execFileSync, ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient, ApiError, AttributeSchema } from "../src/api.js";
import { composeCaption, diffMatches } from "../src/compose.js";

const PORT = 8931;
const api = new ApiClient(`http://127.0.0.1:${PORT}`);

let workDir: string;
let server: ChildProcess;
let schema: AttributeSchema;

async function waitForHealth(timeoutMs = 60_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      await api.health();
      return;
    } catch {
      await new Promise((r) => setTimeout(r, 500));
    }
  }
  throw new Error("service did not become healthy in time");
}

beforeAll(async () => {
  workDir = mkdtempSync(join(tmpdir(), "cycleface-e2e-"));
  const ckpt = join(workDir, "checkpoint.cyf");
  execFileSync("python3", [
    "-c",
    [
      "import sys",
      "from cycleface.attributes import valid_space",
      "from cycleface.grammar import caption_from_attributes",
      "from cycleface.text_encoder import Vocabulary",
      "from cycleface.checkpoint import ModelBundle, save_checkpoint",
      "caps = [caption_from_attributes(a, s) for a in valid_space() for s in (0, 1)]",
      "bundle = ModelBundle.initialize(Vocabulary.build(caps), seed=3)",
      "save_checkpoint(sys.argv[1], bundle, config={'seed': 3})",
    ].join("\n"),
    ckpt,
  ]);
  server = spawn(
    "python3",
    ["-m", "cycleface.cli", "serve", "--checkpoint", ckpt, "--port", String(PORT)],
    { stdio: "ignore" },
  );
  await waitForHealth();
  schema = await api.attributes();
}, 120_000);

afterAll(() => {
  server?.kill();
  rmSync(workDir, { recursive: true, force: true });
});

describe("toggle-composed captions round trip through the live service", () => {
  it("parses back to exactly the toggled set", async () => {
    const toggled = new Set(["smiling", "hair_black", "eyeglasses"]);
    const res = await api.generate({
      caption: composeCaption(schema, toggled),
      seed: 11,
      samples: 1,
    });
    for (const name of schema.names) {
      expect(res.requested_attributes[name], name).toBe(toggled.has(name));
    }
  });

  it("no toggles parses to the empty set", async () => {
    const res = await api.generate({
      caption: composeCaption(schema, new Set()),
      seed: 1,
    });
    expect(Object.values(res.requested_attributes).every((v) => !v)).toBe(true);
  });

  it("both paraphrase variants parse identically", async () => {
    const toggled = new Set(["bald", "big_nose"]);
    const a = await api.generate({ caption: composeCaption(schema, toggled, 0), seed: 2 });
    const b = await api.generate({ caption: composeCaption(schema, toggled, 1), seed: 2 });
    expect(a.requested_attributes).toEqual(b.requested_attributes);
  });
});

describe("seed lock", () => {
  it("regenerating with the locked seed reproduces identical images", async () => {
    const caption = composeCaption(schema, new Set(["lipstick", "hair_blond"]));
    const first = await api.generate({ caption, samples: 3 });
    const replay = await api.generate({ caption, seed: first.seed, samples: 3 });
    expect(replay.seed).toBe(first.seed);
    expect(replay.samples.map((s) => s.png_base64)).toEqual(
      first.samples.map((s) => s.png_base64),
    );
  });
});

describe("attribute diff chips", () => {
  it("reported diff equals the XOR of requested and recovered", async () => {
    const caption = composeCaption(schema, new Set(["smiling", "beard_shadow"]));
    const res = await api.generate({ caption, seed: 7, samples: 4 });
    for (const sample of res.samples) {
      expect(
        diffMatches(sample.attribute_diff, res.requested_attributes,
                    sample.recovered_attributes),
      ).toBe(true);
    }
  });
});

describe("validation errors surface as 4xx", () => {
  it("empty caption", async () => {
    await expect(api.generate({ caption: "   " })).rejects.toMatchObject({
      status: 400,
    });
  });

  it("sample count out of range reports the field", async () => {
    const err = await api.generate({ caption: "x", samples: 40 }).catch((e) => e);
    expect(err).toBeInstanceOf(ApiError);
    expect(err.status).toBe(400);
    expect(err.detail.some((d: { field: string }) => d.field.includes("samples"))).toBe(true);
  });
});
