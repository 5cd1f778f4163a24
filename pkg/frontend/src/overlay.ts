// Zone control panel: one slider row per registry zone, plus translucent
// boxes positioned over the face preview from each zone's default_box
// fractions. Controls stay disabled until an image is loaded.

import type { ZoneInfo } from "./api";
import type { SessionState } from "./state";

export class ZoneOverlay {
  private readonly sliders = new Map<string, HTMLInputElement>();
  private readonly toggles = new Map<string, HTMLInputElement>();
  private readonly readouts = new Map<string, HTMLElement>();
  private readonly boxes = new Map<string, HTMLElement>();
  private imageLoaded = false;

  constructor(
    panel: HTMLElement,
    boxLayer: HTMLElement,
    private readonly state: SessionState,
    private readonly onChange: () => void = () => {},
  ) {
    for (const zone of state.zones()) {
      panel.appendChild(this.buildRow(zone));
      boxLayer.appendChild(this.buildBox(zone));
    }
    this.refresh();
  }

  private buildRow(zone: ZoneInfo): HTMLElement {
    const row = document.createElement("div");
    row.className = "zone-row";
    row.dataset.zone = zone.zone_id;

    const toggle = document.createElement("input");
    toggle.type = "checkbox";
    toggle.addEventListener("change", () => {
      this.state.setEnabled(zone.zone_id, toggle.checked);
      this.refresh();
      this.onChange();
    });
    this.toggles.set(zone.zone_id, toggle);

    const label = document.createElement("label");
    label.textContent = zone.display_noun;

    const slider = document.createElement("input");
    slider.type = "range";
    slider.min = "0";
    slider.max = "100";
    slider.step = "1";
    slider.value = String(this.state.value(zone.zone_id));
    slider.addEventListener("input", () => {
      this.state.setValue(zone.zone_id, Number(slider.value));
      this.refresh();
      this.onChange();
    });
    this.sliders.set(zone.zone_id, slider);

    const readout = document.createElement("span");
    readout.className = "readout";
    this.readouts.set(zone.zone_id, readout);

    row.append(toggle, label, slider, readout);
    return row;
  }

  private buildBox(zone: ZoneInfo): HTMLElement {
    const box = document.createElement("div");
    box.className = "zone-box";
    box.dataset.zone = zone.zone_id;
    box.title = zone.display_noun;
    const [x0, y0, x1, y1] = zone.default_box;
    box.style.left = pct(x0);
    box.style.top = pct(y0);
    box.style.width = pct(x1 - x0);
    box.style.height = pct(y1 - y0);
    this.boxes.set(zone.zone_id, box);
    return box;
  }

  setImageLoaded(loaded: boolean): void {
    this.imageLoaded = loaded;
    this.refresh();
  }

  private refresh(): void {
    for (const [zoneId, slider] of this.sliders) {
      const active = this.imageLoaded && this.state.enabled(zoneId);
      slider.disabled = !active;
      const toggle = this.toggles.get(zoneId) as HTMLInputElement;
      toggle.disabled = !this.imageLoaded;
      toggle.checked = this.state.enabled(zoneId);
      const readout = this.readouts.get(zoneId) as HTMLElement;
      readout.textContent = active ? `${this.state.value(zoneId)}%` : "—";
      const box = this.boxes.get(zoneId) as HTMLElement;
      box.classList.toggle("active", active);
    }
  }
}

function pct(fraction: number): string {
  return `${(fraction * 100).toFixed(2)}%`;
}
