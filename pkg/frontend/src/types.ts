/** Wire types of the annotation service. */

export interface Span {
  entity: string;
  char_start: number;
  char_end: number;
  text: string;
}

export interface ModelResult {
  model_name: string;
  spans: Span[];
  timing_ms: number;
}

export interface AnnotateResponse {
  results: ModelResult[];
}

export interface ModelInfo {
  name: string;
  kind: string;
  training_meta: Record<string, unknown>;
}
