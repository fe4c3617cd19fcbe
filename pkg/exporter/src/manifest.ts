/** Export manifest: provenance plus a checksum for every emitted file. */

import { createHash } from "node:crypto";
import * as fs from "node:fs";

export interface ExportManifest {
  framework: string;
  framework_version: string;
  architecture: string;
  normalization: "pixels/255";
  outputs: Record<string, string>; // file name -> sha256
  agreement: {
    tolerance: number;
    max_abs_diff: number;
    per_probe: number[];
  } | null;
}

export function checksumFile(filePath: string): string {
  return createHash("sha256").update(fs.readFileSync(filePath)).digest("hex");
}

export function writeManifest(filePath: string, manifest: ExportManifest | object): void {
  fs.writeFileSync(filePath, JSON.stringify(manifest, null, 2) + "\n");
}
