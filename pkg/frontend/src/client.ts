/**
 * HTTP client for the facekit flat-buffer adapter endpoints.
 *
 * The adapter speaks base64-encoded contiguous little-endian buffers, so a
 * training loop in this runtime can hand over typed arrays without writing
 * out any intermediate text formats. All calls are stateless.
 */

import {
  decodeFloat64,
  decodeInt32,
  decodeInt8,
  encodeFloat32,
  encodeInt8,
} from "./buffers";

export interface MatchConfig {
  pos_iou_threshold?: number;
  neg_iou_threshold?: number;
  guarantee_best_anchor?: boolean;
}

export interface FlatBatch {
  imageWidth: number;
  imageHeight: number;
  /** n x 4 row-major anchor boxes (x0, y0, x1, y1). */
  anchors: Float32Array;
  /** m x 4 row-major ground-truth boxes. */
  gts: Float32Array;
  /** n per-anchor scores in [0, 1]. */
  scores: Float32Array;
}

export interface AssignResult {
  /** Per-anchor tri-state labels: 1 positive, 0 negative, -1 ignore. */
  labels: Int8Array;
  /** Per-anchor matched gt index, -1 where unmatched. */
  gtIndices: Int32Array;
}

export interface EvalImage {
  /** m x 4 ground-truth boxes. */
  gtBoxes: Float32Array;
  /** m skip flags (non-zero = excluded from matching). */
  gtSkip: Int8Array;
  /** k x 4 detection boxes. */
  detBoxes: Float32Array;
  /** k detection scores in [0, 1]. */
  detScores: Float32Array;
}

export interface EvalOptions {
  matchIou?: number;
  nfaThreshold?: number;
  numThresholds?: number;
}

export interface EvalResult {
  ap: number;
  nfa: number;
  /** num_thresholds x 3 rows of (precision, recall, threshold). */
  curve: Float64Array;
}

export class AdapterError extends Error {
  constructor(
    message: string,
    public readonly status: number,
  ) {
    super(message);
    this.name = "AdapterError";
  }
}

async function post(baseUrl: string, path: string, payload: unknown): Promise<any> {
  const resp = await fetch(new URL(path, baseUrl), {
    method: "POST",
    headers: { "content-type": "application/json" },
    body: JSON.stringify(payload),
  });
  const body: any = await resp.json().catch(() => ({}));
  if (!resp.ok) {
    const detail =
      typeof body?.detail === "string" ? body.detail : JSON.stringify(body);
    throw new AdapterError(detail, resp.status);
  }
  return body;
}

export class FacekitClient {
  constructor(private readonly baseUrl: string) {}

  async version(): Promise<{ name: string; version: string }> {
    const resp = await fetch(new URL("/version", this.baseUrl));
    if (!resp.ok) {
      throw new AdapterError(`version check failed`, resp.status);
    }
    return (await resp.json()) as { name: string; version: string };
  }

  /** Balanced anchor assignment over flat buffers; mirrors the native call
   * bitwise on identical inputs. */
  async assignFlat(batch: FlatBatch, config?: MatchConfig): Promise<AssignResult> {
    if (batch.anchors.length % 4 !== 0 || batch.gts.length % 4 !== 0) {
      throw new AdapterError("box buffers must be n x 4 row-major", 0);
    }
    const body = await post(this.baseUrl, "/adapter/assign-flat", {
      image_width: batch.imageWidth,
      image_height: batch.imageHeight,
      anchors: encodeFloat32(batch.anchors),
      gts: encodeFloat32(batch.gts),
      scores: encodeFloat32(batch.scores),
      ...(config ? { config } : {}),
    });
    return {
      labels: decodeInt8(body.labels),
      gtIndices: decodeInt32(body.gt_indices),
    };
  }

  /** Detection evaluation over flat buffers: AP, false-alarm count, and the
   * full precision/recall/threshold curve. */
  async evaluateFlat(images: EvalImage[], options?: EvalOptions): Promise<EvalResult> {
    const body = await post(this.baseUrl, "/adapter/evaluate-flat", {
      images: images.map((im) => ({
        gt_boxes: encodeFloat32(im.gtBoxes),
        gt_skip: encodeInt8(im.gtSkip),
        det_boxes: encodeFloat32(im.detBoxes),
        det_scores: encodeFloat32(im.detScores),
      })),
      ...(options?.matchIou !== undefined ? { match_iou: options.matchIou } : {}),
      ...(options?.nfaThreshold !== undefined
        ? { nfa_threshold: options.nfaThreshold }
        : {}),
      ...(options?.numThresholds !== undefined
        ? { num_thresholds: options.numThresholds }
        : {}),
    });
    return {
      ap: body.ap,
      nfa: body.nfa,
      curve: decodeFloat64(body.curve),
    };
  }
}
