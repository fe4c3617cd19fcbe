/**
 * Conversion from a TensorFlow.js layers model to the engine's JSON model
 * document.
 *
 * Supported source layers: InputLayer, Flatten, Dense with linear or relu
 * activation (relu becomes a separate engine layer).  The final dense must
 * be linear so the exported file yields logits; anything else is rejected
 * with the offending layers listed by name.  Dense kernels are stored
 * [in, out] by TensorFlow.js and transposed to the engine's row-major
 * [out][in] layout.
 */

import type * as tf from "@tensorflow/tfjs";

export type EngineLayer =
  | { kind: "dense"; in: number; out: number; weights: number[][]; bias: number[] }
  | { kind: "relu" }
  | { kind: "flatten" }
  | { kind: "maxpool2x2" };

export interface EngineModelDoc {
  format_version: 1;
  input_shape: number[];
  class_count: number;
  layers: EngineLayer[];
}

export class UnsupportedLayersError extends Error {
  constructor(public readonly offending: string[]) {
    super(`unsupported source layers: ${offending.join(", ")}`);
    this.name = "UnsupportedLayersError";
  }
}

function transpose(kernel: number[][]): number[][] {
  const rows = kernel.length;
  const cols = kernel[0].length;
  const out: number[][] = [];
  for (let c = 0; c < cols; c++) {
    const row = new Array<number>(rows);
    for (let r = 0; r < rows; r++) {
      row[r] = kernel[r][c];
    }
    out.push(row);
  }
  return out;
}

export function toEngineModel(model: tf.LayersModel): EngineModelDoc {
  const inputShape = (model.inputs[0].shape.slice(1) as number[]).map(Number);
  const layers: EngineLayer[] = [];
  const offending: string[] = [];
  const denseLayers: tf.layers.Layer[] = [];

  for (const layer of model.layers) {
    const cls = layer.getClassName();
    if (cls === "InputLayer") {
      continue;
    }
    if (cls === "Flatten") {
      layers.push({ kind: "flatten" });
      continue;
    }
    if (cls !== "Dense") {
      offending.push(`${layer.name} (${cls})`);
      continue;
    }
    const activation = (layer.getConfig() as { activation?: string }).activation ?? "linear";
    const [kernel, bias] = layer.getWeights();
    const kernelArr = kernel.arraySync() as number[][];
    const biasArr = Array.from(bias.dataSync());
    layers.push({
      kind: "dense",
      in: kernelArr.length,
      out: kernelArr[0].length,
      weights: transpose(kernelArr),
      bias: biasArr,
    });
    denseLayers.push(layer);
    if (activation === "relu") {
      layers.push({ kind: "relu" });
    } else if (activation !== "linear") {
      offending.push(`${layer.name} (Dense activation=${activation}; export logits instead)`);
    }
  }

  if (offending.length > 0) {
    throw new UnsupportedLayersError(offending);
  }
  if (denseLayers.length === 0) {
    throw new UnsupportedLayersError(["<model has no dense layers>"]);
  }
  const last = layers[layers.length - 1];
  if (last.kind !== "dense") {
    throw new UnsupportedLayersError(["<model must end in a linear dense layer>"]);
  }
  return {
    format_version: 1,
    input_shape: inputShape,
    class_count: last.out,
    layers,
  };
}

/** Architecture summary string, e.g. "mlp 784-128-64-10". */
export function describeArchitecture(doc: EngineModelDoc): string {
  const sizes: number[] = [];
  for (const layer of doc.layers) {
    if (layer.kind === "dense") {
      if (sizes.length === 0) {
        sizes.push(layer.in);
      }
      sizes.push(layer.out);
    }
  }
  return `mlp ${sizes.join("-")}`;
}
