/**
 * Single-page analyst UI: paste CVE text, pick a tagger (or all), read
 * color-highlighted entity spans. Pure client of the annotation service;
 * no tokenization or labeling happens here.
 */

import { ApiClient, ApiError } from "./api.js";
import { ENTITY_COLORS, ENTITY_TYPES } from "./colors.js";
import { renderBlock } from "./render.js";
import type { ModelInfo } from "./types.js";

export interface App {
  refreshModels(): Promise<void>;
  submit(): Promise<void>;
  elements: {
    input: HTMLTextAreaElement;
    selector: HTMLSelectElement;
    button: HTMLButtonElement;
    results: HTMLElement;
    error: HTMLElement;
  };
}

function legendHtml(): string {
  const items = ENTITY_TYPES.map(
    (entity) =>
      `<li><span class="swatch" style="background:${ENTITY_COLORS[entity]}"></span>${entity}</li>`,
  );
  return `<ul class="legend">${items.join("")}</ul>`;
}

export function initApp(root: HTMLElement, client: ApiClient): App {
  root.innerHTML = `
    <header>
      <h1>CVE entity highlighter</h1>
      ${legendHtml()}
    </header>
    <div class="controls">
      <textarea class="cve-input" rows="5" placeholder="Enter Text Here"></textarea>
      <div class="row">
        <label>model
          <select class="model-select"><option value="all">all</option></select>
        </label>
        <button class="submit" type="button" disabled>Annotate</button>
      </div>
    </div>
    <div class="error-banner" role="alert" hidden></div>
    <div class="results"></div>
  `;
  const input = root.querySelector<HTMLTextAreaElement>(".cve-input")!;
  const selector = root.querySelector<HTMLSelectElement>(".model-select")!;
  const button = root.querySelector<HTMLButtonElement>(".submit")!;
  const results = root.querySelector<HTMLElement>(".results")!;
  const error = root.querySelector<HTMLElement>(".error-banner")!;

  let inFlight: AbortController | null = null;
  let modelNames: string[] = [];

  function syncButton(): void {
    button.disabled = input.value.trim() === "";
  }

  function showError(message: string): void {
    error.textContent = message;
    error.hidden = false;
  }

  function clearError(): void {
    error.textContent = "";
    error.hidden = true;
  }

  async function refreshModels(): Promise<void> {
    const models: ModelInfo[] = await client.models();
    modelNames = models.map((m) => m.name);
    const current = selector.value;
    const options = ['<option value="all">all</option>'].concat(
      modelNames.map((name) => `<option value="${name}">${name}</option>`),
    );
    selector.innerHTML = options.join("");
    selector.value =
      current === "all" || modelNames.includes(current) ? current : "all";
  }

  async function annotateOnce(): Promise<void> {
    inFlight?.abort();
    const controller = new AbortController();
    inFlight = controller;
    const response = await client.annotate(
      input.value,
      selector.value,
      controller.signal,
    );
    if (controller !== inFlight) return; // a newer request superseded this one
    results.innerHTML = response.results
      .map((r) => renderBlock(r.model_name, input.value, r.spans))
      .join("");
  }

  async function submit(): Promise<void> {
    if (input.value.trim() === "") return;
    clearError();
    try {
      await annotateOnce();
    } catch (err) {
      if (err instanceof DOMException && err.name === "AbortError") return;
      if (err instanceof ApiError && err.status === 404) {
        // Stale model list: refetch, then retry once.
        try {
          await refreshModels();
          await annotateOnce();
          return;
        } catch (retryErr) {
          showError(String((retryErr as Error).message ?? retryErr));
          return;
        }
      }
      showError(String((err as Error).message ?? err));
    }
  }

  input.addEventListener("input", syncButton);
  button.addEventListener("click", () => void submit());
  selector.addEventListener("change", () => {
    if (input.value.trim() !== "") void submit();
  });
  syncButton();

  return { refreshModels, submit, elements: { input, selector, button, results, error } };
}

export async function bootstrap(): Promise<void> {
  const root = document.getElementById("app");
  if (!root) throw new Error("missing #app element");
  const app = initApp(root, new ApiClient());
  try {
    await app.refreshModels();
  } catch {
    // The selector still offers "all"; errors surface on submit.
  }
}
