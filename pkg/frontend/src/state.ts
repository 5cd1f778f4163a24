// Editor session state. Validation lives here so the rest of the UI can
// trust its inputs: slider values are integers in [0, 100] for known zones,
// enforced at the only write path, and outbound requests can only be built
// from that validated state.

import type { InferParams, InferResult, ZoneInfo } from "./api";

export type HistoryEntry = {
  readonly label: string;
  readonly url: string;
  readonly seed: string;
  readonly durationMs: number;
  readonly applied: Record<string, number>;
};

export class SessionState {
  private readonly known: Map<string, ZoneInfo>;
  private readonly values = new Map<string, number>();
  private readonly enabledZones = new Set<string>();
  private readonly entries: HistoryEntry[] = [];
  private inFlight = false;

  constructor(zones: ZoneInfo[]) {
    if (zones.length === 0) {
      throw new Error("zone registry is empty");
    }
    this.known = new Map(zones.map((z) => [z.zone_id, z]));
    for (const z of zones) {
      this.values.set(z.zone_id, 50);
    }
  }

  zones(): ZoneInfo[] {
    return [...this.known.values()];
  }

  private requireZone(zoneId: string): ZoneInfo {
    const zone = this.known.get(zoneId);
    if (!zone) {
      throw new RangeError(`unknown zone: ${zoneId}`);
    }
    return zone;
  }

  setValue(zoneId: string, percent: number): void {
    this.requireZone(zoneId);
    if (!Number.isInteger(percent) || percent < 0 || percent > 100) {
      throw new RangeError(
        `slider value must be an integer in [0, 100], got ${percent}`,
      );
    }
    this.values.set(zoneId, percent);
  }

  value(zoneId: string): number {
    this.requireZone(zoneId);
    return this.values.get(zoneId) as number;
  }

  setEnabled(zoneId: string, enabled: boolean): void {
    this.requireZone(zoneId);
    if (enabled) {
      this.enabledZones.add(zoneId);
    } else {
      this.enabledZones.delete(zoneId);
    }
  }

  enabled(zoneId: string): boolean {
    this.requireZone(zoneId);
    return this.enabledZones.has(zoneId);
  }

  /** Targets sent to the service: only zones the user switched on. */
  targets(): ReadonlyMap<string, number> {
    const out = new Map<string, number>();
    for (const zoneId of this.enabledZones) {
      out.set(zoneId, this.values.get(zoneId) as number);
    }
    return out;
  }

  // -- single in-flight request guard ---------------------------------

  get busy(): boolean {
    return this.inFlight;
  }

  beginRequest(): void {
    if (this.inFlight) {
      throw new Error("a request is already in flight");
    }
    this.inFlight = true;
  }

  endRequest(): void {
    this.inFlight = false;
  }

  // -- append-only result history -------------------------------------

  get history(): readonly HistoryEntry[] {
    return this.entries.slice();
  }

  recordResult(label: string, url: string, result: InferResult): HistoryEntry {
    const entry: HistoryEntry = {
      label,
      url,
      seed: result.seed,
      durationMs: result.durationMs,
      applied: { ...result.applied },
    };
    this.entries.push(entry);
    return entry;
  }
}

/**
 * A validated inference request. The constructor is private: instances
 * exist only via `fromState`, which reads targets from a `SessionState`
 * (already zone- and range-checked), so out-of-range values or unknown
 * zones cannot be represented in an outbound request.
 */
export class InferRequest {
  private constructor(
    readonly targets: ReadonlyMap<string, number>,
    readonly params: InferParams,
    readonly ethnicity: string,
    readonly refine: boolean,
  ) {}

  static fromState(
    state: SessionState,
    params: InferParams,
    options: { ethnicity?: string; refine?: boolean } = {},
  ): InferRequest {
    if (!Number.isInteger(params.seed)) {
      throw new RangeError(`seed must be an integer, got ${params.seed}`);
    }
    if (!Number.isInteger(params.gamma_inf) || params.gamma_inf < 1) {
      throw new RangeError(`gamma_inf must be a positive integer`);
    }
    if (!(params.gamma_n > 0 && params.gamma_n <= 1)) {
      throw new RangeError(`gamma_n must be in (0, 1], got ${params.gamma_n}`);
    }
    if (!(params.gamma_g >= 0)) {
      throw new RangeError(`gamma_g must be >= 0, got ${params.gamma_g}`);
    }
    return new InferRequest(
      state.targets(),
      { ...params },
      options.ethnicity ?? "synthetic-b",
      options.refine ?? false,
    );
  }

  /** Serialized form for the service's `request` form field. */
  toWire(): string {
    return JSON.stringify({
      targets: Object.fromEntries(this.targets),
      params: this.params,
      ethnicity: this.ethnicity,
      refine: this.refine,
    });
  }
}
