/**
 * Per-group appearance latent handles and interpolation sliders.
 *
 * The panel never invents latent values: the base handles come from a render
 * response (the server reports the codes it used), and remixing builds a new
 * render request in which only the chosen group's code is replaced (resample)
 * or linearly interpolated toward a second handle.
 */

import type { Pose, RenderRequest } from "./api.js";

export function lerp(a: number[], b: number[], t: number): number[] {
  if (a.length !== b.length) throw new Error("latent lengths differ");
  if (t === 0) return [...a];
  if (t === 1) return [...b];
  return a.map((v, i) => (1 - t) * v + t * b[i]);
}

export class LatentPanel {
  z: number[] | null = null;
  zGroups: number[][] | null = null;
  /** optional second endpoint per group for interpolation */
  targets: Array<number[] | null>;
  sliders: number[];

  constructor(public readonly numGroups: number) {
    this.targets = Array(numGroups).fill(null);
    this.sliders = Array(numGroups).fill(0);
  }

  setBase(z: number[], zGroups: number[][]): void {
    if (zGroups.length !== this.numGroups) {
      throw new Error(`expected ${this.numGroups} group latents, got ${zGroups.length}`);
    }
    this.z = [...z];
    this.zGroups = zGroups.map((g) => [...g]);
  }

  setTarget(group: number, values: number[]): void {
    this.checkGroup(group);
    this.targets[group] = [...values];
  }

  setSlider(group: number, t: number): void {
    this.checkGroup(group);
    if (t < 0 || t > 1) throw new Error("slider position must lie in [0, 1]");
    this.sliders[group] = t;
  }

  private checkGroup(group: number): void {
    if (!Number.isInteger(group) || group < 0 || group >= this.numGroups) {
      throw new Error(`group ${group} outside [0, ${this.numGroups})`);
    }
  }

  private requireBase(): { z: number[]; zGroups: number[][] } {
    if (!this.z || !this.zGroups) throw new Error("no base render yet");
    return { z: this.z, zGroups: this.zGroups };
  }

  /** Render request with only group `group` replaced by `values`. */
  resampleRequest(checkpointId: string, pose: Pose, group: number, values: number[]): RenderRequest {
    this.checkGroup(group);
    const { z, zGroups } = this.requireBase();
    const z_i = zGroups.map((g, i) => (i === group ? [...values] : [...g]));
    return { checkpoint_id: checkpointId, pose, z: [...z], z_i };
  }

  /** Render request with group `group` lerped toward its target. */
  interpolateRequest(checkpointId: string, pose: Pose, group: number): RenderRequest {
    this.checkGroup(group);
    const { z, zGroups } = this.requireBase();
    const target = this.targets[group];
    if (!target) throw new Error(`group ${group} has no interpolation target`);
    const t = this.sliders[group];
    const z_i = zGroups.map((g, i) => (i === group ? lerp(g, target, t) : [...g]));
    return { checkpoint_id: checkpointId, pose, z: [...z], z_i };
  }

  /** Commit an interpolation: the blended code becomes the group's base. */
  commit(group: number): void {
    this.checkGroup(group);
    const { zGroups } = this.requireBase();
    const target = this.targets[group];
    if (!target) return;
    zGroups[group] = lerp(zGroups[group], target, this.sliders[group]);
    this.sliders[group] = 0;
  }
}
