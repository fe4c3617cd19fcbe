/**
 * Model export: emit the engine JSON document, probe inputs with the
 * source framework's logits, and (unless skipped) the cross-runtime
 * agreement vector computed by running the engine CLI on the same probes.
 *
 * The engine normalizes pixels by dividing by 255; probes are stored as
 * unsigned bytes and fed to the source model as byte/255, so both runtimes
 * see bit-identical float32 inputs.
 */

import * as tf from "@tensorflow/tfjs";
import { spawnSync } from "node:child_process";
import * as fs from "node:fs";
import * as path from "node:path";

import { syntheticImages } from "./data.js";
import { describeArchitecture, toEngineModel, type EngineModelDoc } from "./engineModel.js";
import { writeIdx } from "./idx.js";
import { checksumFile, writeManifest, type ExportManifest } from "./manifest.js";

export const PROBE_COUNT = 10;
export const AGREEMENT_TOLERANCE = 1e-4;

export interface ModelExportResult {
  modelPath: string;
  doc: EngineModelDoc;
  probeLogits: number[][];
  engineLogits: number[][] | null;
  agreement: number[] | null; // per-probe max abs diff
  manifest: ExportManifest;
}

export function stableJson(value: unknown): string {
  if (value === null || typeof value !== "object") {
    return JSON.stringify(value);
  }
  if (Array.isArray(value)) {
    return `[${value.map(stableJson).join(",")}]`;
  }
  const entries = Object.entries(value as Record<string, unknown>)
    .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
    .map(([k, v]) => `${JSON.stringify(k)}:${stableJson(v)}`);
  return `{${entries.join(",")}}`;
}

function sourceLogits(model: tf.LayersModel, probes: Uint8Array, shape: number[]): number[][] {
  const floats = Float32Array.from(probes, (v) => v / 255);
  const xs = tf.tensor(floats, [PROBE_COUNT, ...shape]);
  const out = model.predict(xs) as tf.Tensor;
  const logits = out.arraySync() as number[][];
  xs.dispose();
  out.dispose();
  return logits;
}

export function runEngineLogits(
  modelPath: string,
  probesPath: string,
  outPath: string,
  pythonBin = process.env.OODFUZZ_PYTHON ?? "python3",
): number[][] {
  const result = spawnSync(
    pythonBin,
    ["-m", "oodfuzz.cli", "logits", "--model", modelPath, "--data", probesPath, "--out", outPath],
    { encoding: "utf-8" },
  );
  if (result.status !== 0) {
    throw new Error(
      `engine logits command failed (${result.status}): ${result.stderr || result.stdout}`,
    );
  }
  const payload = JSON.parse(fs.readFileSync(outPath, "utf-8")) as { logits: number[][] };
  return payload.logits;
}

export interface ExportModelOptions {
  outPath: string;
  probeSeed?: number;
  verifyWithEngine?: boolean;
  pythonBin?: string;
}

export async function exportModel(
  model: tf.LayersModel,
  options: ExportModelOptions,
): Promise<ModelExportResult> {
  const doc = toEngineModel(model);
  const outPath = options.outPath;
  const outDir = path.dirname(outPath);
  fs.mkdirSync(outDir, { recursive: true });
  fs.writeFileSync(outPath, stableJson(doc) + "\n");

  const inputShape = doc.input_shape;
  const pixelsPerImage = inputShape.reduce((a, b) => a * b, 1);
  const probes = syntheticImages(PROBE_COUNT, options.probeSeed ?? 1234, 28);
  let probePixels: Uint8Array;
  let probeDims: number[];
  if (inputShape.length === 3 && inputShape[0] === 28 && inputShape[1] === 28) {
    probePixels =
      inputShape[2] === 1
        ? probes.pixels
        : replicateChannels(probes.pixels, inputShape[2]);
    probeDims =
      inputShape[2] === 1 ? [PROBE_COUNT, 28, 28] : [PROBE_COUNT, 28, 28, inputShape[2]];
  } else {
    // flat or unusual input shapes take the first pixelsPerImage bytes per probe
    probePixels = new Uint8Array(PROBE_COUNT * pixelsPerImage);
    for (let n = 0; n < PROBE_COUNT; n++) {
      probePixels.set(
        probes.pixels.subarray(n * 784, n * 784 + pixelsPerImage),
        n * pixelsPerImage,
      );
    }
    probeDims = [PROBE_COUNT, ...inputShape];
  }
  const probesPath = path.join(outDir, "probe-images.idx");
  writeIdx(probesPath, probeDims, probePixels);

  const logits = sourceLogits(model, probePixels, inputShape);
  const sourceLogitsPath = path.join(outDir, "probe-logits.json");
  fs.writeFileSync(sourceLogitsPath, stableJson({ logits }) + "\n");

  let engineLogits: number[][] | null = null;
  let agreement: number[] | null = null;
  if (options.verifyWithEngine !== false) {
    const engineOut = path.join(outDir, "engine-logits.json");
    engineLogits = runEngineLogits(outPath, probesPath, engineOut, options.pythonBin);
    agreement = logits.map((row, i) =>
      Math.max(...row.map((v, j) => Math.abs(v - engineLogits![i][j]))),
    );
  }

  const manifest: ExportManifest = {
    framework: "tensorflow.js",
    framework_version: tf.version.tfjs,
    architecture: describeArchitecture(doc),
    normalization: "pixels/255",
    outputs: {
      [path.basename(outPath)]: checksumFile(outPath),
      "probe-images.idx": checksumFile(probesPath),
      "probe-logits.json": checksumFile(sourceLogitsPath),
    },
    agreement:
      agreement === null
        ? null
        : { tolerance: AGREEMENT_TOLERANCE, max_abs_diff: Math.max(...agreement), per_probe: agreement },
  };
  const manifestPath = path.join(outDir, "export-manifest.json");
  writeManifest(manifestPath, manifest);

  if (agreement !== null && Math.max(...agreement) > AGREEMENT_TOLERANCE) {
    throw new Error(
      `cross-runtime logit disagreement ${Math.max(...agreement)} exceeds ${AGREEMENT_TOLERANCE}`,
    );
  }
  return { modelPath: outPath, doc, probeLogits: logits, engineLogits, agreement, manifest };
}

function replicateChannels(single: Uint8Array, channels: number): Uint8Array {
  const out = new Uint8Array(single.length * channels);
  for (let i = 0; i < single.length; i++) {
    for (let c = 0; c < channels; c++) {
      out[i * channels + c] = single[i];
    }
  }
  return out;
}
