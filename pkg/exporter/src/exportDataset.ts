/**
 * Dataset export to the engine's IDX pair.
 *
 * Sources: "synthetic" (deterministic generated images), "mnist" (reads an
 * existing IDX pair from --source-dir and re-emits it losslessly; the real
 * benchmark files are not bundled), or a JSON file with nested image
 * arrays.  8-bit data round-trips byte for byte; float data in [0, 1] is
 * only accepted with the explicit quantize flag.
 */

import * as fs from "node:fs";
import * as path from "node:path";

import { isIntegerBytes, quantizeToBytes, syntheticImages, type ByteImages } from "./data.js";
import { readIdx, writeIdx } from "./idx.js";
import { checksumFile, writeManifest } from "./manifest.js";

export interface DatasetExportResult {
  imagesPath: string;
  labelsPath: string;
  count: number;
  manifestPath: string;
}

export interface ExportDatasetOptions {
  name: string; // "synthetic" | "mnist" | "json"
  outDir: string;
  count?: number;
  seed?: number;
  sourceDir?: string; // for name=mnist
  sourceJson?: string; // for name=json
  quantize?: boolean;
}

function fromJsonFile(sourcePath: string, quantize: boolean): ByteImages {
  const doc = JSON.parse(fs.readFileSync(sourcePath, "utf-8")) as {
    images: number[][][][] | number[][][];
    labels: number[];
  };
  const images = doc.images;
  const count = images.length;
  const height = images[0].length;
  const widthRow = images[0][0] as number[] | number[][];
  const width = widthRow.length;
  const first = (images[0][0] as (number | number[])[])[0];
  const channels = Array.isArray(first) ? (first as number[]).length : 1;
  const flat: number[] = [];
  for (const image of images) {
    for (const row of image) {
      for (const cell of row as (number | number[])[]) {
        if (Array.isArray(cell)) {
          flat.push(...cell);
        } else {
          flat.push(cell);
        }
      }
    }
  }
  let pixels: Uint8Array;
  if (isIntegerBytes(flat)) {
    pixels = Uint8Array.from(flat);
  } else if (quantize) {
    pixels = quantizeToBytes(flat);
  } else {
    throw new Error(
      "source images are not 8-bit; pass --quantize to scale [0, 1] floats to bytes",
    );
  }
  return {
    count,
    height,
    width,
    channels,
    pixels,
    labels: Uint8Array.from(doc.labels),
  };
}

function fromIdxPair(sourceDir: string): ByteImages {
  const imagesPath = path.join(sourceDir, "train-images.idx");
  const labelsPath = path.join(sourceDir, "train-labels.idx");
  for (const p of [imagesPath, labelsPath]) {
    if (!fs.existsSync(p)) {
      throw new Error(`expected source file ${p}; the benchmark files are not bundled`);
    }
  }
  const images = readIdx(imagesPath);
  const labels = readIdx(labelsPath);
  const [count, height, width] = images.dims;
  const channels = images.dims.length === 4 ? images.dims[3] : 1;
  return { count, height, width, channels, pixels: images.data, labels: labels.data };
}

export function exportDataset(options: ExportDatasetOptions): DatasetExportResult {
  let data: ByteImages;
  if (options.name === "synthetic") {
    data = syntheticImages(options.count ?? 1000, options.seed ?? 0);
  } else if (options.name === "mnist") {
    if (!options.sourceDir) {
      throw new Error("--name mnist requires --source-dir with the standard IDX pair");
    }
    data = fromIdxPair(options.sourceDir);
  } else if (options.name === "json") {
    if (!options.sourceJson) {
      throw new Error("--name json requires --source-json");
    }
    data = fromJsonFile(options.sourceJson, options.quantize ?? false);
  } else {
    throw new Error(`unknown dataset source ${options.name}; use synthetic, mnist or json`);
  }

  fs.mkdirSync(options.outDir, { recursive: true });
  const imagesPath = path.join(options.outDir, `${options.name}-images.idx`);
  const labelsPath = path.join(options.outDir, `${options.name}-labels.idx`);
  const dims =
    data.channels === 1
      ? [data.count, data.height, data.width]
      : [data.count, data.height, data.width, data.channels];
  writeIdx(imagesPath, dims, data.pixels);
  writeIdx(labelsPath, [data.count], data.labels);

  const manifestPath = path.join(options.outDir, `${options.name}-manifest.json`);
  writeManifest(manifestPath, {
    framework: "tensorflow.js",
    source: options.name,
    normalization: "pixels/255 at the engine boundary; stored as unsigned bytes",
    count: data.count,
    image_shape: [data.height, data.width, data.channels],
    outputs: {
      [path.basename(imagesPath)]: checksumFile(imagesPath),
      [path.basename(labelsPath)]: checksumFile(labelsPath),
    },
  });
  return { imagesPath, labelsPath, count: data.count, manifestPath };
}
