import { describe, expect, it } from "vitest";

import { LatentPanel, lerp } from "../src/latents.js";

const pose = { pitch: 0, yaw: 0, roll: 0 };

function panelWithBase(): LatentPanel {
  const panel = new LatentPanel(3);
  panel.setBase(
    [9, 9],
    [
      [1, 2],
      [3, 4],
      [5, 6],
    ],
  );
  return panel;
}

describe("lerp", () => {
  it("returns the first endpoint exactly at t=0", () => {
    const a = [0.1, 0.2, 0.3];
    const b = [9, 9, 9];
    expect(lerp(a, b, 0)).toEqual(a);
  });

  it("returns the second endpoint exactly at t=1", () => {
    const a = [0.1, 0.2, 0.3];
    const b = [9, 9, 9];
    expect(lerp(a, b, 1)).toEqual(b);
  });

  it("blends elementwise", () => {
    expect(lerp([0, 2], [2, 4], 0.5)).toEqual([1, 3]);
  });
});

describe("LatentPanel requests", () => {
  it("resample replaces exactly one group's code", () => {
    const panel = panelWithBase();
    const req = panel.resampleRequest("ck", pose, 1, [7, 8]);
    expect(req.z).toEqual([9, 9]);
    expect(req.z_i).toEqual([
      [1, 2],
      [7, 8],
      [5, 6],
    ]);
  });

  it("interpolate at t=0 resends the base codes untouched", () => {
    const panel = panelWithBase();
    panel.setTarget(2, [50, 60]);
    panel.setSlider(2, 0);
    const req = panel.interpolateRequest("ck", pose, 2);
    expect(req.z_i![2]).toEqual([5, 6]);
  });

  it("interpolate at t=1 lands on the target code", () => {
    const panel = panelWithBase();
    panel.setTarget(0, [10, 20]);
    panel.setSlider(0, 1);
    const req = panel.interpolateRequest("ck", pose, 0);
    expect(req.z_i![0]).toEqual([10, 20]);
    // other groups untouched
    expect(req.z_i![1]).toEqual([3, 4]);
  });

  it("commit folds the blend into the base", () => {
    const panel = panelWithBase();
    panel.setTarget(1, [5, 6]);
    panel.setSlider(1, 0.5);
    panel.commit(1);
    expect(panel.zGroups![1]).toEqual([4, 5]);
    expect(panel.sliders[1]).toBe(0);
  });

  it("validates group indices and slider range", () => {
    const panel = panelWithBase();
    expect(() => panel.setSlider(0, 1.5)).toThrow(/\[0, 1\]/);
    expect(() => panel.resampleRequest("ck", pose, 5, [0, 0])).toThrow(/group/);
  });

  it("refuses to build requests before a base render exists", () => {
    const panel = new LatentPanel(2);
    expect(() => panel.resampleRequest("ck", pose, 0, [1])).toThrow(/base/);
  });
});
