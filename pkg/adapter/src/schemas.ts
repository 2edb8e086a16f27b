import { z } from "zod";

const maskRleSchema = z.object({
  w: z.number().int().min(1),
  h: z.number().int().min(1),
  runs: z.array(z.number().int().min(0)),
});

const boxSchema = z.tuple([
  z.number().int().min(0),
  z.number().int().min(0),
  z.number().int().min(1),
  z.number().int().min(1),
]);

const detectionSchema = z.object({
  box: boxSchema,
  label: z.string(),
  score: z.number().min(0).max(1),
  mask_rle: maskRleSchema.optional(),
});

export const detectRequestSchema = z.object({
  image: z.string().min(1),
  queries: z.array(z.string().min(1)).min(1),
  box_threshold: z.number().min(0).max(1).default(0.3),
});

export const embedRequestSchema = z.object({
  image: z.string().min(1),
});

export const trackUpdateRequestSchema = z.object({
  keyframes: z
    .array(
      z.object({
        keyframe_index: z.number().int().min(1),
        objects: z.array(
          z.object({
            track_id: z.number().int().min(1),
            detection: detectionSchema,
          }),
        ),
      }),
    )
    .min(1),
});

export type DetectRequest = z.infer<typeof detectRequestSchema>;
export type EmbedRequest = z.infer<typeof embedRequestSchema>;
export type TrackUpdateRequest = z.infer<typeof trackUpdateRequestSchema>;
