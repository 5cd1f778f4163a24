import {
  ApiError,
  DEFAULT_PARAMS,
  fetchHealth,
  fetchZones,
  postInfer,
} from "./api";
import { ComparePanel } from "./compare";
import { ZoneOverlay } from "./overlay";
import { InferRequest, SessionState } from "./state";

const BASE = import.meta.env.VITE_LDLA_BASE ?? "http://127.0.0.1:8742";

async function init(): Promise<void> {
  const status = must("status");
  const health = await fetchHealth(BASE).catch(() => null);
  if (!health || health.status !== "ok") {
    status.textContent =
      health?.status === "loading"
        ? "Service is still loading its checkpoint — retry shortly."
        : `Cannot reach the aging service at ${BASE}.`;
    return;
  }

  const state = new SessionState(await fetchZones(BASE));
  const compare = new ComparePanel(must("compare"));
  const overlay = new ZoneOverlay(
    must("zone-panel"),
    must("box-layer"),
    state,
  );

  const fileInput = must("file") as HTMLInputElement;
  const preview = must("preview") as HTMLImageElement;
  const seedInput = must("seed") as HTMLInputElement;
  const refineInput = must("refine") as HTMLInputElement;
  const submit = must("submit") as HTMLButtonElement;

  let upload: File | null = null;
  fileInput.addEventListener("change", () => {
    upload = fileInput.files?.[0] ?? null;
    if (!upload) return;
    const url = URL.createObjectURL(upload);
    preview.src = url;
    compare.showOriginal(url);
    overlay.setImageLoaded(true);
    submit.disabled = false;
    status.textContent = `Loaded ${upload.name} (${upload.size} bytes).`;
  });

  submit.disabled = true;
  submit.addEventListener("click", async () => {
    if (!upload || state.busy) return;
    let request: InferRequest;
    try {
      request = InferRequest.fromState(state, {
        ...DEFAULT_PARAMS,
        seed: Number(seedInput.value || "0"),
      }, { refine: refineInput.checked });
    } catch (err) {
      status.textContent = String(err);
      return;
    }
    state.beginRequest();
    submit.disabled = true;
    status.textContent = "Running…";
    try {
      const result = await postInfer(BASE, upload, upload.name, request.toWire());
      const url = URL.createObjectURL(result.blob);
      const label = `#${state.history.length + 1} seed=${result.seed}`;
      state.recordResult(label, url, result);
      compare.setHistory(state.history);
      status.textContent = `Done in ${result.durationMs.toFixed(0)} ms (seed ${result.seed}).`;
    } catch (err) {
      status.textContent =
        err instanceof ApiError
          ? `Rejected: ${err.message}`
          : `Request failed: ${String(err)}`;
    } finally {
      state.endRequest();
      submit.disabled = false;
    }
  });
}

function must(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

init().catch((err) => {
  const status = document.getElementById("status");
  if (status) status.textContent = `Startup failed: ${String(err)}`;
});
