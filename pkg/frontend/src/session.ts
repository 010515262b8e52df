/** Photofit session state: current prompt and regression result, slider
 * overrides layered on top (never mutating the stored regression), pinned
 * parameter vectors for interpolation, and export assembly.
 *
 * Every mesh shown is a verbatim service response; in-flight decode requests
 * are superseded by the newest one (latest wins). */

import { ServiceClient, type MeshJson } from "./api.js";
import {
  cloneParams,
  interpolateParams,
  paramsEqual,
  paramsToJson,
  promptHash,
  type ParamGroup,
  type ParamVector,
} from "./params.js";

export interface SubmitResult {
  params: ParamVector;
  mesh: MeshJson;
  unchanged: boolean;
}

export interface SessionExport {
  baseName: string;
  paramsJson: string;
  objText: string;
}

export const SLIDER_LIMIT = 5;

export class StudioSession {
  prompt = "";
  /** Last regression result; slider offsets never touch this. */
  regressed: ParamVector | null = null;
  /** Additive per-index offsets keyed by group. */
  private overrides = new Map<ParamGroup, Map<number, number>>();
  pinA: ParamVector | null = null;
  pinB: ParamVector | null = null;
  mesh: MeshJson | null = null;

  private decodeSeq = 0;

  constructor(public client: ServiceClient) {}

  /** Regressed params with slider offsets applied, as a fresh object. */
  effectiveParams(): ParamVector {
    if (!this.regressed) throw new Error("no regression result yet");
    const params = cloneParams(this.regressed);
    for (const [group, offsets] of this.overrides) {
      for (const [index, value] of offsets) {
        if (index >= 0 && index < params[group].length) {
          params[group][index] += value;
        }
      }
    }
    return params;
  }

  async submitPrompt(text: string): Promise<SubmitResult> {
    const embedding = await this.client.embedText(text);
    const params = await this.client.regress(embedding);
    const unchanged = this.regressed !== null && paramsEqual(params, this.regressed);
    this.prompt = text;
    this.regressed = params;
    this.overrides.clear();
    const mesh = await this.decodeLatest(params);
    return { params, mesh: mesh ?? this.mesh!, unchanged };
  }

  /** Sets one slider offset (clamped) and re-decodes. Returns null when a
   * newer request superseded this one. */
  async adjustSlider(
    group: ParamGroup,
    index: number,
    value: number,
  ): Promise<MeshJson | null> {
    const clamped = Math.max(-SLIDER_LIMIT, Math.min(SLIDER_LIMIT, value));
    if (!this.overrides.has(group)) this.overrides.set(group, new Map());
    this.overrides.get(group)!.set(index, clamped);
    return this.decodeLatest(this.effectiveParams());
  }

  /** Clears every slider; the next decode shows exactly the regression. */
  async resetSliders(): Promise<MeshJson | null> {
    this.overrides.clear();
    return this.decodeLatest(this.effectiveParams());
  }

  sliderValue(group: ParamGroup, index: number): number {
    return this.overrides.get(group)?.get(index) ?? 0;
  }

  pinCurrentA(): void {
    this.pinA = this.effectiveParams();
  }

  pinCurrentB(): void {
    this.pinB = this.effectiveParams();
  }

  /** Blends the two pinned vectors and decodes the result. */
  async interpolate(t: number): Promise<{ params: ParamVector; mesh: MeshJson | null }> {
    if (!this.pinA || !this.pinB) throw new Error("pin two parameter sets first");
    const params = interpolateParams(this.pinA, this.pinB, t);
    const mesh = await this.decodeLatest(params);
    return { params, mesh };
  }

  /** OBJ plus params JSON, stamped with the prompt hash. */
  async exportSession(): Promise<SessionExport> {
    const params = this.effectiveParams();
    const objText = await this.client.decodeObj(params);
    return {
      baseName: `photofit-${promptHash(this.prompt)}`,
      paramsJson: paramsToJson(params),
      objText,
    };
  }

  private async decodeLatest(params: ParamVector): Promise<MeshJson | null> {
    const seq = ++this.decodeSeq;
    const mesh = await this.client.decodeJson(params);
    if (seq !== this.decodeSeq) return null; // superseded by a newer request
    this.mesh = mesh;
    return mesh;
  }
}
