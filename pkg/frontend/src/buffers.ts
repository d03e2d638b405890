/**
 * Base64 <-> typed-array helpers for the flat-buffer adapter endpoints.
 *
 * All buffers on the wire are contiguous little-endian. Encoding goes
 * through a DataView so the result is correct on big-endian hosts too.
 */

export function encodeFloat32(values: ArrayLike<number>): string {
  const buf = new ArrayBuffer(values.length * 4);
  const view = new DataView(buf);
  for (let i = 0; i < values.length; i++) {
    view.setFloat32(i * 4, values[i], true);
  }
  return Buffer.from(buf).toString("base64");
}

export function decodeFloat32(b64: string): Float32Array {
  const raw = Buffer.from(b64, "base64");
  if (raw.length % 4 !== 0) {
    throw new Error(`float32 buffer length ${raw.length} not a multiple of 4`);
  }
  const out = new Float32Array(raw.length / 4);
  const view = new DataView(raw.buffer, raw.byteOffset, raw.length);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getFloat32(i * 4, true);
  }
  return out;
}

export function encodeFloat64(values: ArrayLike<number>): string {
  const buf = new ArrayBuffer(values.length * 8);
  const view = new DataView(buf);
  for (let i = 0; i < values.length; i++) {
    view.setFloat64(i * 8, values[i], true);
  }
  return Buffer.from(buf).toString("base64");
}

export function decodeFloat64(b64: string): Float64Array {
  const raw = Buffer.from(b64, "base64");
  if (raw.length % 8 !== 0) {
    throw new Error(`float64 buffer length ${raw.length} not a multiple of 8`);
  }
  const out = new Float64Array(raw.length / 8);
  const view = new DataView(raw.buffer, raw.byteOffset, raw.length);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getFloat64(i * 8, true);
  }
  return out;
}

export function encodeInt8(values: ArrayLike<number>): string {
  return Buffer.from(Int8Array.from(values).buffer).toString("base64");
}

export function decodeInt8(b64: string): Int8Array {
  const raw = Buffer.from(b64, "base64");
  return new Int8Array(raw.buffer.slice(raw.byteOffset, raw.byteOffset + raw.length));
}

export function decodeInt32(b64: string): Int32Array {
  const raw = Buffer.from(b64, "base64");
  if (raw.length % 4 !== 0) {
    throw new Error(`int32 buffer length ${raw.length} not a multiple of 4`);
  }
  const out = new Int32Array(raw.length / 4);
  const view = new DataView(raw.buffer, raw.byteOffset, raw.length);
  for (let i = 0; i < out.length; i++) {
    out[i] = view.getInt32(i * 4, true);
  }
  return out;
}
