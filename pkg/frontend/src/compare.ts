// Result comparison: original preview, the latest result, and an A/B wipe
// between any two history entries driven by a divider slider.

import type { HistoryEntry } from "./state";

export class ComparePanel {
  private readonly originalImg: HTMLImageElement;
  private readonly wipeBase: HTMLImageElement;
  private readonly wipeTop: HTMLImageElement;
  private readonly wipeTopClip: HTMLElement;
  private readonly divider: HTMLInputElement;
  private readonly selectA: HTMLSelectElement;
  private readonly selectB: HTMLSelectElement;
  private readonly placeholder: HTMLElement;
  private readonly stage: HTMLElement;
  private entries: readonly HistoryEntry[] = [];

  constructor(root: HTMLElement) {
    this.originalImg = document.createElement("img");
    this.originalImg.className = "compare-original";
    this.originalImg.alt = "original";

    this.placeholder = document.createElement("p");
    this.placeholder.className = "compare-placeholder";
    this.placeholder.textContent = "No results yet — run the model first.";

    this.wipeBase = document.createElement("img");
    this.wipeBase.alt = "compare A";
    this.wipeTop = document.createElement("img");
    this.wipeTop.alt = "compare B";
    this.wipeTopClip = document.createElement("div");
    this.wipeTopClip.className = "wipe-top";
    this.wipeTopClip.appendChild(this.wipeTop);

    this.divider = document.createElement("input");
    this.divider.type = "range";
    this.divider.min = "0";
    this.divider.max = "100";
    this.divider.value = "50";
    this.divider.addEventListener("input", () => this.applyWipe());

    this.selectA = document.createElement("select");
    this.selectB = document.createElement("select");
    this.selectA.addEventListener("change", () => this.applySelection());
    this.selectB.addEventListener("change", () => this.applySelection());

    this.stage = document.createElement("div");
    this.stage.className = "wipe-stage";
    this.stage.append(this.wipeBase, this.wipeTopClip);

    const picker = document.createElement("div");
    picker.className = "wipe-picker";
    picker.append(this.selectA, this.selectB, this.divider);

    root.append(this.originalImg, this.placeholder, this.stage, picker);
    this.applyWipe();
    this.setHistory([]);
  }

  showOriginal(url: string): void {
    this.originalImg.src = url;
  }

  setHistory(entries: readonly HistoryEntry[]): void {
    this.entries = entries;
    const empty = entries.length === 0;
    this.placeholder.hidden = !empty;
    this.stage.hidden = empty;
    for (const select of [this.selectA, this.selectB]) {
      select.replaceChildren(
        ...entries.map((e, i) => {
          const opt = document.createElement("option");
          opt.value = String(i);
          opt.textContent = e.label;
          return opt;
        }),
      );
      select.disabled = empty;
    }
    if (!empty) {
      this.selectA.value = String(Math.max(0, entries.length - 2));
      this.selectB.value = String(entries.length - 1);
    }
    this.applySelection();
  }

  private applySelection(): void {
    const a = this.entries[Number(this.selectA.value)];
    const b = this.entries[Number(this.selectB.value)];
    if (a) this.wipeBase.src = a.url;
    if (b) this.wipeTop.src = b.url;
  }

  /** Clip the top image to the divider position (percent from the left). */
  private applyWipe(): void {
    const cut = Number(this.divider.value);
    this.wipeTopClip.style.clipPath = `inset(0 0 0 ${cut}%)`;
  }
}

/** Number of bytes that differ between two equally sized pixel buffers. */
export function pixelDiffCount(
  a: Uint8Array | Uint8ClampedArray,
  b: Uint8Array | Uint8ClampedArray,
): number {
  if (a.length !== b.length) {
    throw new RangeError(`buffer sizes differ: ${a.length} vs ${b.length}`);
  }
  let count = 0;
  for (let i = 0; i < a.length; i++) {
    if (a[i] !== b[i]) count++;
  }
  return count;
}
