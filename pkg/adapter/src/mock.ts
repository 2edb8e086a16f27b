import { createHash } from "crypto";

import { MaskRle, boxMask } from "./mask";
import { ImageSize } from "./png";

export interface Detection {
  box: [number, number, number, number];
  label: string;
  score: number;
  mask_rle: MaskRle;
}

// Expands sha256(seed | body | counter) into as many bytes as a consumer
// draws, so every mock response is a pure function of request bytes + seed.
export class DigestStream {
  private block: Buffer;
  private counter = 0;
  private offset = 0;

  constructor(private readonly seed: string, body: Buffer) {
    this.block = createHash("sha256")
      .update(seed)
      .update(":")
      .update(body)
      .digest();
  }

  next(): number {
    if (this.offset === this.block.length) {
      this.counter += 1;
      this.block = createHash("sha256")
        .update(this.block)
        .update(String(this.counter))
        .digest();
      this.offset = 0;
    }
    return this.block[this.offset++];
  }
}

function boxFrom(stream: DigestStream, size: ImageSize): [number, number, number, number] {
  const { width, height } = size;
  const x1 = width > 1 ? stream.next() % (width - 1) : 0;
  const y1 = height > 1 ? stream.next() % (height - 1) : 0;
  const x2 = x1 + 1 + stream.next() % (width - x1 - 1 || 1);
  const y2 = y1 + 1 + stream.next() % (height - y1 - 1 || 1);
  return [x1, y1, Math.min(x2, width), Math.min(y2, height)];
}

export function mockDetections(
  stream: DigestStream,
  size: ImageSize,
  queries: string[],
  boxThreshold: number,
): Detection[] {
  const count = 1 + stream.next() % 3;
  const detections: Detection[] = [];
  for (let i = 0; i < count; i++) {
    const box = boxFrom(stream, size);
    // scores stay in [0.5, 1) so default thresholds keep every object
    const score = 0.5 + stream.next() / 512;
    if (score < boxThreshold) continue;
    detections.push({
      box,
      label: queries[i % queries.length],
      score,
      mask_rle: boxMask(size.width, size.height, box),
    });
  }
  return detections;
}

export function mockEmbedding(stream: DigestStream, dim: number): number[] {
  const raw: number[] = [];
  let sumSquares = 0;
  for (let i = 0; i < dim; i++) {
    const value = stream.next() / 255 - 0.5;
    raw.push(value);
    sumSquares += value * value;
  }
  const norm = Math.sqrt(sumSquares) || 1;
  return raw.map((value) => value / norm);
}
