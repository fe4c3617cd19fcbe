#!/usr/bin/env node
/**
 * Exporter command line.
 *
 *   export-model   --arch mlp784 --weights random:7 --out out/model.json
 *                  [--train-epochs N] [--no-verify] [--python python3]
 *   export-dataset --name synthetic --out-dir data [--count N --seed S]
 *                  [--source-dir D] [--source-json F] [--quantize]
 */

import { parseArgs } from "node:util";

import { exportDataset } from "./exportDataset.js";
import { exportModel } from "./exportModel.js";
import {
  buildMlp,
  loadWeightsJson,
  parseArch,
  seedWeights,
  trainOnSynthetic,
} from "./referenceModel.js";

async function cmdExportModel(argv: string[]): Promise<number> {
  const { values } = parseArgs({
    args: argv,
    options: {
      arch: { type: "string", default: "mlp784" },
      weights: { type: "string", default: "random:7" },
      "train-epochs": { type: "string", default: "0" },
      out: { type: "string" },
      "no-verify": { type: "boolean", default: false },
      python: { type: "string" },
      "probe-seed": { type: "string", default: "1234" },
    },
  });
  if (!values.out) {
    console.error("export-model: --out is required");
    return 2;
  }
  const sizes = parseArch(values.arch!);
  const flat = sizes[0] !== 784;
  const model = buildMlp(sizes, flat ? [sizes[0]] : [28, 28, 1]);

  const weights = values.weights!;
  if (weights.startsWith("random")) {
    const seed = weights.includes(":") ? parseInt(weights.split(":")[1], 10) : 7;
    seedWeights(model, seed);
  } else {
    loadWeightsJson(model, weights);
  }
  const epochs = parseInt(values["train-epochs"]!, 10);
  if (epochs > 0) {
    await trainOnSynthetic(model, epochs, 11);
  }

  const result = await exportModel(model, {
    outPath: values.out,
    probeSeed: parseInt(values["probe-seed"]!, 10),
    verifyWithEngine: !values["no-verify"],
    pythonBin: values.python,
  });
  console.log(
    JSON.stringify(
      {
        model: result.modelPath,
        architecture: result.manifest.architecture,
        agreement_max_abs_diff: result.manifest.agreement?.max_abs_diff ?? null,
      },
      null,
      2,
    ),
  );
  return 0;
}

function cmdExportDataset(argv: string[]): number {
  const { values } = parseArgs({
    args: argv,
    options: {
      name: { type: "string", default: "synthetic" },
      "out-dir": { type: "string" },
      count: { type: "string", default: "1000" },
      seed: { type: "string", default: "0" },
      "source-dir": { type: "string" },
      "source-json": { type: "string" },
      quantize: { type: "boolean", default: false },
    },
  });
  if (!values["out-dir"]) {
    console.error("export-dataset: --out-dir is required");
    return 2;
  }
  const result = exportDataset({
    name: values.name!,
    outDir: values["out-dir"]!,
    count: parseInt(values.count!, 10),
    seed: parseInt(values.seed!, 10),
    sourceDir: values["source-dir"],
    sourceJson: values["source-json"],
    quantize: values.quantize,
  });
  console.log(JSON.stringify(result, null, 2));
  return 0;
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  try {
    if (command === "export-model") {
      return await cmdExportModel(rest);
    }
    if (command === "export-dataset") {
      return cmdExportDataset(rest);
    }
    console.error("usage: oodfuzz-export {export-model|export-dataset} [options]");
    return 2;
  } catch (err) {
    console.error(`error: ${err instanceof Error ? err.message : err}`);
    return 1;
  }
}

main().then((code) => {
  process.exitCode = code;
});
