/**
 * Camera orbit dial bounded to the training pose prior.
 *
 * Poses outside roughly two standard deviations of the prior render garbage
 * (the generator never saw them), so the dial clamps to that box.
 */

import type { Pose } from "./api.js";

export interface PosePriorBox {
  pitchMean: number;
  pitchStd: number;
  yawMean: number;
  yawStd: number;
}

export const DEFAULT_PRIOR: PosePriorBox = {
  pitchMean: 0,
  pitchStd: 0.1,
  yawMean: 0,
  yawStd: 0.3,
};

export function clampToPrior(pitch: number, yaw: number, prior: PosePriorBox, k = 2): Pose {
  const clamp = (v: number, mean: number, std: number) =>
    Math.min(Math.max(v, mean - k * std), mean + k * std);
  return {
    pitch: clamp(pitch, prior.pitchMean, prior.pitchStd),
    yaw: clamp(yaw, prior.yawMean, prior.yawStd),
    roll: 0,
  };
}

export class OrbitDial {
  pose: Pose;

  constructor(
    private prior: PosePriorBox = DEFAULT_PRIOR,
    private k = 2,
  ) {
    this.pose = { pitch: prior.pitchMean, yaw: prior.yawMean, roll: 0 };
  }

  set(pitch: number, yaw: number): Pose {
    this.pose = clampToPrior(pitch, yaw, this.prior, this.k);
    return this.pose;
  }

  nudge(dPitch: number, dYaw: number): Pose {
    return this.set(this.pose.pitch + dPitch, this.pose.yaw + dYaw);
  }
}
