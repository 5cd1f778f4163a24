import { beforeEach, describe, expect, it } from "vitest";

import type { ZoneInfo } from "../src/api";
import { ZoneOverlay } from "../src/overlay";
import { SessionState } from "../src/state";

const EIGHT_ZONES: ZoneInfo[] = [
  ["forehead", [0.3, 0.05, 0.7, 0.25]],
  ["glabellar", [0.42, 0.25, 0.58, 0.4]],
  ["inter_ocular", [0.4, 0.3, 0.6, 0.42]],
  ["under_eye", [0.28, 0.42, 0.72, 0.55]],
  ["crows_feet", [0.66, 0.35, 0.88, 0.5]],
  ["nasolabial_folds", [0.3, 0.55, 0.7, 0.72]],
  ["upper_lip", [0.38, 0.68, 0.62, 0.78]],
  ["lip_corners", [0.3, 0.76, 0.7, 0.88]],
].map(([id, box]) => ({
  zone_id: id as string,
  display_noun: `${id} wrinkles`,
  scale_max: 5,
  default_box: box as [number, number, number, number],
}));

let panel: HTMLElement;
let boxLayer: HTMLElement;
let state: SessionState;
let overlay: ZoneOverlay;

beforeEach(() => {
  document.body.innerHTML = "";
  panel = document.createElement("div");
  boxLayer = document.createElement("div");
  document.body.append(panel, boxLayer);
  state = new SessionState(EIGHT_ZONES);
  overlay = new ZoneOverlay(panel, boxLayer, state);
});

describe("slider rows", () => {
  it("renders one slider per registry zone", () => {
    const sliders = panel.querySelectorAll('input[type="range"]');
    expect(sliders).toHaveLength(8);
    const labels = [...panel.querySelectorAll("label")].map((l) => l.textContent);
    expect(labels).toContain("forehead wrinkles");
    expect(labels).toContain("lip_corners wrinkles");
  });

  it("bounds every slider to integer percent steps", () => {
    for (const el of panel.querySelectorAll('input[type="range"]')) {
      const slider = el as HTMLInputElement;
      expect(slider.min).toBe("0");
      expect(slider.max).toBe("100");
      expect(slider.step).toBe("1");
    }
  });

  it("keeps controls disabled until an image is loaded", () => {
    const sliders = [...panel.querySelectorAll('input[type="range"]')] as HTMLInputElement[];
    expect(sliders.every((s) => s.disabled)).toBe(true);

    overlay.setImageLoaded(true);
    // sliders stay off until the zone itself is enabled
    expect(sliders.every((s) => s.disabled)).toBe(true);
    state.setEnabled("forehead", true);
    overlay.setImageLoaded(true);
    const foreheadRow = panel.querySelector('[data-zone="forehead"]') as HTMLElement;
    const slider = foreheadRow.querySelector('input[type="range"]') as HTMLInputElement;
    expect(slider.disabled).toBe(false);
  });

  it("routes slider input through validated state", () => {
    overlay.setImageLoaded(true);
    state.setEnabled("under_eye", true);
    const row = panel.querySelector('[data-zone="under_eye"]') as HTMLElement;
    const slider = row.querySelector('input[type="range"]') as HTMLInputElement;
    slider.value = "73";
    slider.dispatchEvent(new Event("input"));
    expect(state.value("under_eye")).toBe(73);
    expect(row.querySelector(".readout")?.textContent).toBe("73%");
  });
});

describe("zone boxes", () => {
  it("positions each box from its default_box fractions", () => {
    const box = boxLayer.querySelector('[data-zone="forehead"]') as HTMLElement;
    expect(box.style.left).toBe("30.00%");
    expect(box.style.top).toBe("5.00%");
    expect(box.style.width).toBe("40.00%");
    expect(box.style.height).toBe("20.00%");
  });

  it("marks a box active only when its zone is armed", () => {
    const box = boxLayer.querySelector('[data-zone="glabellar"]') as HTMLElement;
    expect(box.classList.contains("active")).toBe(false);
    state.setEnabled("glabellar", true);
    overlay.setImageLoaded(true);
    expect(box.classList.contains("active")).toBe(true);
  });
});
