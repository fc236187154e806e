/**
 * Pure highlight rendering: text plus entity spans in, markup out.
 *
 * The contract is strict text fidelity: the visible text of the rendered
 * markup is character-identical to the submitted text. Spans only wrap
 * segments in colored <mark> elements; the entity name travels in a title
 * attribute (tooltip), never in visible text.
 */

import { colorFor } from "./colors.js";
import type { Span } from "./types.js";

export interface Segment {
  text: string;
  entity: string | null;
}

export class SpanBoundsError extends RangeError {
  constructor(message: string) {
    super(message);
    this.name = "SpanBoundsError";
  }
}

/**
 * Slice text into plain and entity segments.
 *
 * Spans must be sorted, non-overlapping, and within bounds; anything else
 * throws SpanBoundsError so the caller can render a diagnostic instead of
 * silently truncating.
 */
export function segmentText(text: string, spans: Span[]): Segment[] {
  const segments: Segment[] = [];
  let cursor = 0;
  for (const span of spans) {
    if (span.char_start < cursor) {
      throw new SpanBoundsError(
        `span at ${span.char_start} overlaps or is out of order (cursor ${cursor})`,
      );
    }
    if (span.char_start >= span.char_end || span.char_end > text.length) {
      throw new SpanBoundsError(
        `span [${span.char_start}, ${span.char_end}) outside text of length ${text.length}`,
      );
    }
    if (span.char_start > cursor) {
      segments.push({ text: text.slice(cursor, span.char_start), entity: null });
    }
    segments.push({
      text: text.slice(span.char_start, span.char_end),
      entity: span.entity,
    });
    cursor = span.char_end;
  }
  if (cursor < text.length) {
    segments.push({ text: text.slice(cursor), entity: null });
  }
  return segments;
}

export function visibleTextOfSegments(segments: Segment[]): string {
  return segments.map((s) => s.text).join("");
}

const HTML_ESCAPES: Record<string, string> = {
  "&": "&amp;",
  "<": "&lt;",
  ">": "&gt;",
  '"': "&quot;",
  "'": "&#39;",
};

export function escapeHtml(s: string): string {
  return s.replace(/[&<>"']/g, (c) => HTML_ESCAPES[c]);
}

/** Inverse of the markup this module emits; used to check text fidelity. */
export function visibleTextOfHtml(html: string): string {
  return html
    .replace(/<[^>]*>/g, "")
    .replace(/&lt;/g, "<")
    .replace(/&gt;/g, ">")
    .replace(/&quot;/g, '"')
    .replace(/&#39;/g, "'")
    .replace(/&amp;/g, "&");
}

export function renderSegments(segments: Segment[]): string {
  const parts: string[] = [];
  for (const seg of segments) {
    const escaped = escapeHtml(seg.text);
    if (seg.entity === null) {
      parts.push(escaped);
    } else {
      const color = colorFor(seg.entity) ?? "#616161";
      parts.push(
        `<mark class="ent ent-${escapeHtml(seg.entity)}" ` +
          `style="background:${color}33;border-bottom:2px solid ${color}" ` +
          `title="${escapeHtml(seg.entity)}">${escaped}</mark>`,
      );
    }
  }
  return parts.join("");
}

/**
 * One result block for a model. Out-of-bounds spans abort the block with a
 * visible diagnostic; the text is never partially rendered.
 */
export function renderBlock(modelName: string, text: string, spans: Span[]): string {
  const header = `<h3 class="model-name">${escapeHtml(modelName)}</h3>`;
  let body: string;
  try {
    const ordered = [...spans].sort((a, b) => a.char_start - b.char_start);
    body = `<p class="annotated">${renderSegments(segmentText(text, ordered))}</p>`;
  } catch (err) {
    if (err instanceof SpanBoundsError) {
      body = `<p class="render-error" role="alert">cannot render result: ${escapeHtml(
        err.message,
      )}</p>`;
    } else {
      throw err;
    }
  }
  return `<section class="result-block" data-model="${escapeHtml(modelName)}">${header}${body}</section>`;
}
