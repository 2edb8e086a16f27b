export interface MaskRle {
  w: number;
  h: number;
  runs: number[];
}

// Row-major run lengths, background first, so runs always sum to w*h
// and a leading 0 marks a mask that starts on foreground.
export function encodeMask(w: number, h: number, pixels: Uint8Array): MaskRle {
  if (pixels.length !== w * h) {
    throw new Error(`mask has ${pixels.length} pixels, expected ${w * h}`);
  }
  const runs: number[] = [];
  let value = 0;
  let length = 0;
  for (const pixel of pixels) {
    const bit = pixel ? 1 : 0;
    if (bit === value) {
      length += 1;
    } else {
      runs.push(length);
      value = bit;
      length = 1;
    }
  }
  runs.push(length);
  return { w, h, runs };
}

export function decodeMask(mask: MaskRle): Uint8Array {
  const pixels = new Uint8Array(mask.w * mask.h);
  let cursor = 0;
  let value = 0;
  for (const run of mask.runs) {
    if (value) pixels.fill(1, cursor, cursor + run);
    cursor += run;
    value = 1 - value;
  }
  if (cursor !== mask.w * mask.h) {
    throw new Error(`runs cover ${cursor} pixels of ${mask.w * mask.h}`);
  }
  return pixels;
}

export function boxMask(w: number, h: number, box: [number, number, number, number]): MaskRle {
  const [x1, y1, x2, y2] = box;
  const pixels = new Uint8Array(w * h);
  for (let y = y1; y < y2; y++) {
    pixels.fill(1, y * w + x1, y * w + x2);
  }
  return encodeMask(w, h, pixels);
}
