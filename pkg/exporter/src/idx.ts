/**
 * IDX file reading and writing (unsigned-byte payloads only).
 *
 * Header layout: two zero bytes, a type byte (0x08 = unsigned byte), a
 * dimension-count byte, then one big-endian uint32 per dimension.
 */

import * as fs from "node:fs";

export const IDX_UBYTE = 0x08;

export interface IdxArray {
  dims: number[];
  data: Uint8Array;
}

export function encodeIdx(dims: number[], data: Uint8Array): Buffer {
  const count = dims.reduce((a, b) => a * b, 1);
  if (count !== data.length) {
    throw new Error(`IDX payload has ${data.length} bytes, dims ${dims} need ${count}`);
  }
  const header = Buffer.alloc(4 + 4 * dims.length);
  header[0] = 0;
  header[1] = 0;
  header[2] = IDX_UBYTE;
  header[3] = dims.length;
  dims.forEach((d, i) => header.writeUInt32BE(d, 4 + 4 * i));
  return Buffer.concat([header, Buffer.from(data)]);
}

export function writeIdx(filePath: string, dims: number[], data: Uint8Array): void {
  fs.writeFileSync(filePath, encodeIdx(dims, data));
}

export function decodeIdx(raw: Buffer): IdxArray {
  if (raw.length < 4 || raw[0] !== 0 || raw[1] !== 0) {
    throw new Error(`bad IDX magic: ${raw.subarray(0, 4).toString("hex")}`);
  }
  if (raw[2] !== IDX_UBYTE) {
    throw new Error(`unsupported IDX type byte 0x${raw[2].toString(16)}`);
  }
  const ndim = raw[3];
  const headerLen = 4 + 4 * ndim;
  if (raw.length < headerLen) {
    throw new Error("truncated IDX dimension header");
  }
  const dims: number[] = [];
  for (let i = 0; i < ndim; i++) {
    dims.push(raw.readUInt32BE(4 + 4 * i));
  }
  const count = dims.reduce((a, b) => a * b, 1);
  const payload = raw.subarray(headerLen);
  if (payload.length !== count) {
    throw new Error(`IDX payload size ${payload.length} does not match dims ${dims}`);
  }
  return { dims, data: new Uint8Array(payload) };
}

export function readIdx(filePath: string): IdxArray {
  return decodeIdx(fs.readFileSync(filePath));
}
