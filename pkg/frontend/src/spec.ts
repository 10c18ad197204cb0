import { z } from "zod";

/** Figure request: input CSV(s), figure kind, output path, axis options. */
export const FigureSpecSchema = z.object({
  input: z.string().min(1),
  kind: z.enum(["validation_band", "localization_decay", "exitprob_decay",
    "flow_portrait"]),
  output: z.string().min(1),
});

export type FigureSpec = z.infer<typeof FigureSpecSchema>;
