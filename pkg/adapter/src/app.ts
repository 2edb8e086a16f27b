import express, { Express, Request, Response } from "express";
import { z } from "zod";

import { boxMask } from "./mask";
import { DigestStream, mockDetections, mockEmbedding } from "./mock";
import { pngSize } from "./png";
import {
  detectRequestSchema,
  embedRequestSchema,
  trackUpdateRequestSchema,
} from "./schemas";

export const EMBEDDING_DIM = 32;
const VERSION = "0.1.0";

export interface AdapterConfig {
  mode: "live" | "mock";
  seed: string;
}

interface RawBodyRequest extends Request {
  rawBody?: Buffer;
}

function badRequest(res: Response, message: string): void {
  res.status(400).json({ error: message });
}

function parseBody<S extends z.ZodTypeAny>(
  req: Request,
  res: Response,
  schema: S,
): z.infer<S> | undefined {
  const result = schema.safeParse(req.body);
  if (!result.success) {
    badRequest(res, result.error.issues[0].message);
    return undefined;
  }
  return result.data;
}

function decodeImage(encoded: string, res: Response): Buffer | undefined {
  const data = Buffer.from(encoded, "base64");
  // Buffer.from silently drops junk, so re-encoding catches corrupt input
  if (data.length === 0 || data.toString("base64") !== encoded.replace(/\s/g, "")) {
    badRequest(res, "image is not valid base64");
    return undefined;
  }
  return data;
}

export function createApp(config: AdapterConfig): Express {
  const app = express();
  app.use(
    express.json({
      limit: "32mb",
      verify: (req, _res, buf) => {
        (req as RawBodyRequest).rawBody = buf;
      },
    }),
  );

  const stream = (req: Request) =>
    new DigestStream(config.seed, (req as RawBodyRequest).rawBody ?? Buffer.alloc(0));

  app.get("/healthz", (_req, res) => {
    res.json({
      mode: config.mode,
      versions: { adapter: VERSION, node: process.version },
    });
  });

  app.post("/detect", (req, res) => {
    const body = parseBody(req, res, detectRequestSchema);
    if (!body) return;
    const image = decodeImage(body.image, res);
    if (!image) return;
    if (config.mode === "live") {
      res.status(503).json({ error: "model unloaded" });
      return;
    }
    let size;
    try {
      size = pngSize(image);
    } catch (err) {
      badRequest(res, (err as Error).message);
      return;
    }
    res.json({
      detections: mockDetections(stream(req), size, body.queries, body.box_threshold),
    });
  });

  app.post("/embed", (req, res) => {
    const body = parseBody(req, res, embedRequestSchema);
    if (!body) return;
    const image = decodeImage(body.image, res);
    if (!image) return;
    if (config.mode === "live") {
      res.status(503).json({ error: "model unloaded" });
      return;
    }
    res.json({
      embedding: mockEmbedding(stream(req), EMBEDDING_DIM),
      dim: EMBEDDING_DIM,
    });
  });

  app.post("/track_update", (req, res) => {
    const body = parseBody(req, res, trackUpdateRequestSchema);
    if (!body) return;
    for (let i = 1; i < body.keyframes.length; i++) {
      if (body.keyframes[i].keyframe_index <= body.keyframes[i - 1].keyframe_index) {
        badRequest(res, "keyframes must arrive in increasing order");
        return;
      }
    }
    if (config.mode === "live") {
      res.status(503).json({ error: "model unloaded" });
      return;
    }
    // Refinement keeps the caller's ids; the mock passes masks through and
    // fills the box for objects that arrive without one.
    res.json({
      keyframes: body.keyframes.map((frame) => ({
        keyframe_index: frame.keyframe_index,
        objects: frame.objects.map((obj) => ({
          track_id: obj.track_id,
          mask_rle:
            obj.detection.mask_rle ??
            boxMask(
              obj.detection.box[2],
              obj.detection.box[3],
              obj.detection.box,
            ),
        })),
      })),
    });
  });

  return app;
}
