/**
 * Reference MLP construction in TensorFlow.js: seeded random weights, an
 * optional quick training pass on synthetic data, or weights loaded from a
 * JSON file ({"layers": [{"kernel": [[in][out]], "bias": [...]}, ...]}).
 */

import * as tf from "@tensorflow/tfjs";
import * as fs from "node:fs";

import { Lcg, syntheticImages } from "./data.js";

export function parseArch(arch: string): number[] {
  if (arch === "mlp784") {
    return [784, 128, 64, 10];
  }
  const sizes = arch.split("-").map((s) => parseInt(s, 10));
  if (sizes.length < 2 || sizes.some((s) => !Number.isFinite(s) || s < 1)) {
    throw new Error(`cannot parse architecture ${arch!}; use e.g. "784-128-64-10" or "mlp784"`);
  }
  return sizes;
}

export function buildMlp(sizes: number[], inputShape?: number[]): tf.LayersModel {
  const model = tf.sequential();
  const input = inputShape ?? [28, 28, 1];
  let first = true;
  if (input.length > 1) {
    model.add(tf.layers.flatten({ inputShape: input }));
    first = false;
  }
  for (let i = 1; i < sizes.length; i++) {
    model.add(
      tf.layers.dense({
        units: sizes[i],
        activation: i < sizes.length - 1 ? "relu" : "linear",
        ...(first ? { inputShape: input } : {}),
      }),
    );
    first = false;
  }
  return model;
}

/** He-style seeded weights so exports are reproducible without training. */
export function seedWeights(model: tf.LayersModel, seed: number): void {
  const rng = new Lcg(seed);
  const gauss = () => {
    // Box-Muller from two LCG draws
    const u = Math.max(rng.next(), 1e-12);
    const v = rng.next();
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v);
  };
  for (const layer of model.layers) {
    if (layer.getClassName() !== "Dense") {
      continue;
    }
    const [kernel, bias] = layer.getWeights();
    const [fanIn, fanOut] = kernel.shape as [number, number];
    const scale = Math.sqrt(2 / fanIn);
    const values = new Float32Array(fanIn * fanOut);
    for (let i = 0; i < values.length; i++) {
      values[i] = gauss() * scale;
    }
    layer.setWeights([tf.tensor2d(values, [fanIn, fanOut]), tf.zerosLike(bias)]);
  }
}

export function loadWeightsJson(model: tf.LayersModel, path: string): void {
  const doc = JSON.parse(fs.readFileSync(path, "utf-8")) as {
    layers: { kernel: number[][]; bias: number[] }[];
  };
  const dense = model.layers.filter((l) => l.getClassName() === "Dense");
  if (doc.layers.length !== dense.length) {
    throw new Error(
      `weights file has ${doc.layers.length} layers, model has ${dense.length} dense layers`,
    );
  }
  dense.forEach((layer, i) => {
    const { kernel, bias } = doc.layers[i];
    layer.setWeights([tf.tensor2d(kernel), tf.tensor1d(bias)]);
  });
}

export async function trainOnSynthetic(
  model: tf.LayersModel,
  epochs: number,
  seed: number,
  sampleCount = 2000,
): Promise<void> {
  const data = syntheticImages(sampleCount, seed);
  const xs = tf.tensor4d(
    Float32Array.from(data.pixels, (v) => v / 255),
    [data.count, data.height, data.width, data.channels],
  );
  const ys = tf.oneHot(tf.tensor1d(data.labels, "int32"), 10);
  // final layer emits logits, so use the softmax cross-entropy functional form
  model.compile({
    optimizer: tf.train.sgd(0.1),
    loss: (yTrue, yPred) => tf.losses.softmaxCrossEntropy(yTrue, yPred),
  });
  await model.fit(xs, ys, { epochs, batchSize: 128, shuffle: true, verbose: 0 });
  xs.dispose();
  ys.dispose();
}
