const PNG_SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a]);

export interface ImageSize {
  width: number;
  height: number;
}

// The IHDR chunk is mandatory and always first, so the dimensions sit at
// fixed offsets right behind the signature.
export function pngSize(data: Buffer): ImageSize {
  if (data.length < 24 || !data.subarray(0, 8).equals(PNG_SIGNATURE)) {
    throw new Error("not a PNG image");
  }
  const width = data.readUInt32BE(16);
  const height = data.readUInt32BE(20);
  if (width < 1 || height < 1) {
    throw new Error("PNG reports a zero dimension");
  }
  return { width, height };
}
