/**
 * Editing studio: paint semantic masks, remix per-group appearance codes,
 * orbit the camera inside the pose prior, and launch/monitor inversion and
 * edit jobs. All model state stays on the server.
 */

import { SfeClient, argmaxLabels, decodeBase64, decodeFloat32, encodeBase64, ApiError } from "./api.js";
import type { Pose, RenderResponse } from "./api.js";
import { MaskRaster } from "./mask.js";
import { LatentPanel } from "./latents.js";
import { OrbitDial } from "./orbit.js";
import { JobPoller } from "./polling.js";
import { StudioSession } from "./session.js";
import { DEFAULT_PALETTE } from "./png.js";

const GROUP_NAMES = ["background", "face", "hair", "garment"];
const SCALE = 12;

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function gaussian(count: number): number[] {
  const out: number[] = [];
  while (out.length < count) {
    const u = Math.random();
    const v = Math.random();
    const r = Math.sqrt(-2 * Math.log(u + 1e-12));
    out.push(r * Math.cos(2 * Math.PI * v));
    if (out.length < count) out.push(r * Math.sin(2 * Math.PI * v));
  }
  return out.slice(0, count);
}

class Studio {
  client = new SfeClient("");
  session = new StudioSession();
  panel = new LatentPanel(GROUP_NAMES.length);
  dial = new OrbitDial();
  poller = new JobPoller((id) => this.client.job(id));
  baseLabels: MaskRaster | null = null;
  busy = false;

  statusEl = el<HTMLDivElement>("status");
  errorEl = el<HTMLDivElement>("error");
  renderImg = el<HTMLImageElement>("render");
  beforeImg = el<HTMLImageElement>("before");
  afterImg = el<HTMLImageElement>("after");
  maskCanvas = el<HTMLCanvasElement>("mask");
  diffCanvas = el<HTMLCanvasElement>("diff");
  progressEl = el<HTMLProgressElement>("progress");

  brush = { label: 2, radius: 1.5 };

  constructor() {
    this.wire();
    this.restore();
  }

  setStatus(text: string): void {
    this.statusEl.textContent = text;
  }

  showError(err: unknown): void {
    const text = err instanceof ApiError ? `${err.status}: ${err.detail}` : String(err);
    this.errorEl.textContent = text;
    this.errorEl.style.display = "block";
  }

  clearError(): void {
    this.errorEl.style.display = "none";
  }

  private wire(): void {
    el<HTMLButtonElement>("btn-render").onclick = () => this.run(() => this.renderFresh());
    el<HTMLButtonElement>("btn-invert").onclick = () => this.run(() => this.invert());
    el<HTMLButtonElement>("btn-edit").onclick = () => this.run(() => this.submitEdit());
    el<HTMLButtonElement>("btn-undo").onclick = () => {
      this.session.mask?.undo();
      this.drawMask();
    };
    el<HTMLButtonElement>("btn-reset-mask").onclick = () => {
      if (this.baseLabels) {
        this.session.mask = this.baseLabels.clone();
        this.drawMask();
      }
    };
    el<HTMLInputElement>("brush-radius").oninput = (e) => {
      this.brush.radius = Number((e.target as HTMLInputElement).value);
    };
    const labelBox = el<HTMLDivElement>("brush-labels");
    GROUP_NAMES.forEach((name, label) => {
      const btn = document.createElement("button");
      btn.textContent = name;
      const [r, g, b] = DEFAULT_PALETTE[label];
      btn.style.borderBottom = `4px solid rgb(${r},${g},${b})`;
      btn.onclick = () => {
        this.brush.label = label;
        this.setStatus(`brush: ${name}`);
      };
      labelBox.appendChild(btn);
    });

    const latentBox = el<HTMLDivElement>("latents");
    GROUP_NAMES.forEach((name, group) => {
      const row = document.createElement("div");
      row.className = "latent-row";
      const title = document.createElement("span");
      title.textContent = name;
      const resample = document.createElement("button");
      resample.textContent = "resample";
      resample.onclick = () => this.run(() => this.resample(group));
      const slider = document.createElement("input");
      slider.type = "range";
      slider.min = "0";
      slider.max = "1";
      slider.step = "0.05";
      slider.value = "0";
      slider.oninput = () => this.run(() => this.interpolate(group, Number(slider.value)));
      row.append(title, resample, slider);
      latentBox.appendChild(row);
    });

    const pitch = el<HTMLInputElement>("orbit-pitch");
    const yaw = el<HTMLInputElement>("orbit-yaw");
    const orbit = () => {
      const pose = this.dial.set(Number(pitch.value), Number(yaw.value));
      pitch.value = String(pose.pitch);
      yaw.value = String(pose.yaw);
      this.session.pose = pose;
      void this.run(() => this.renderCurrent());
    };
    pitch.onchange = orbit;
    yaw.onchange = orbit;

    this.maskCanvas.onpointerdown = (e) => this.paintAt(e);
    this.maskCanvas.onpointermove = (e) => {
      if (e.buttons & 1) this.paintAt(e);
    };
  }

  private paintAt(e: PointerEvent): void {
    const mask = this.session.mask;
    if (!mask) return;
    const rect = this.maskCanvas.getBoundingClientRect();
    const x = Math.floor(((e.clientX - rect.left) / rect.width) * mask.width);
    const y = Math.floor(((e.clientY - rect.top) / rect.height) * mask.height);
    try {
      mask.paint({ x, y, label: this.brush.label, radius: this.brush.radius });
      this.drawMask();
      this.persist();
    } catch {
      // strokes outside the canvas are ignored
    }
  }

  private async run(fn: () => Promise<void>): Promise<void> {
    if (this.busy) return;
    this.busy = true;
    this.clearError();
    try {
      await fn();
    } catch (err) {
      this.showError(err);
    } finally {
      this.busy = false;
    }
  }

  private persist(): void {
    localStorage.setItem("sfe-session", this.session.serialize());
  }

  private restore(): void {
    const blob = localStorage.getItem("sfe-session");
    if (!blob) {
      void this.run(() => this.bootstrap());
      return;
    }
    try {
      this.session = StudioSession.restore(blob);
      if (this.session.z && this.session.zGroups) {
        this.panel.setBase(this.session.z, this.session.zGroups);
      }
      this.drawMask();
      void this.run(async () => {
        await this.refreshJobsView();
        if (this.session.checkpointId) await this.renderCurrent();
      });
    } catch {
      void this.run(() => this.bootstrap());
    }
  }

  private async bootstrap(): Promise<void> {
    const checkpoints = await this.client.checkpoints();
    if (!checkpoints.length) {
      this.setStatus("no checkpoints on the server; train one first");
      return;
    }
    this.session.checkpointId = checkpoints[0].id;
    await this.renderFresh();
  }

  private async refreshJobsView(): Promise<void> {
    const records = await this.session.refreshJobs(this.client);
    const doneInvert = records.find((r) => r.kind === "invert" && r.state === "done");
    if (doneInvert) this.session.inversionId = doneInvert.id;
    this.setStatus(`restored session: ${records.length} known jobs`);
  }

  private async renderFresh(): Promise<void> {
    if (!this.session.checkpointId) await this.bootstrap();
    const seed = Number(el<HTMLInputElement>("seed").value) || 0;
    const resp = await this.client.render({
      checkpoint_id: this.session.checkpointId!,
      seed,
      pose: this.session.pose,
    });
    this.afterRender(resp);
    this.panel.setBase(resp.z, resp.z_i);
    this.session.z = resp.z;
    this.session.zGroups = resp.z_i;
    await this.reloadLabels();
    this.persist();
    this.setStatus(`rendered seed ${seed}`);
  }

  private async renderCurrent(): Promise<void> {
    if (!this.session.z || !this.session.zGroups || !this.session.checkpointId) return;
    const resp = await this.client.render({
      checkpoint_id: this.session.checkpointId,
      z: this.session.z,
      z_i: this.session.zGroups,
      pose: this.session.pose,
    });
    this.afterRender(resp);
  }

  private afterRender(resp: RenderResponse): void {
    this.renderImg.src = `data:image/png;base64,${resp.rgb_png}`;
  }

  private async reloadLabels(): Promise<void> {
    if (!this.session.checkpointId || !this.session.z || !this.session.zGroups) return;
    const sem = await this.client.semantic({
      checkpoint_id: this.session.checkpointId,
      z: this.session.z,
      z_i: this.session.zGroups,
      pose: this.session.pose,
    });
    const [h, w, n] = sem.sem_meta.shape;
    const labels = argmaxLabels(decodeFloat32(sem.sem_probs), w, h, n);
    this.baseLabels = MaskRaster.fromLabels(labels, w, h, n);
    this.session.mask = this.baseLabels.clone();
    this.drawMask();
  }

  private drawMask(): void {
    const mask = this.session.mask;
    if (!mask) return;
    this.maskCanvas.width = mask.width * SCALE;
    this.maskCanvas.height = mask.height * SCALE;
    const ctx = this.maskCanvas.getContext("2d")!;
    for (let y = 0; y < mask.height; y++) {
      for (let x = 0; x < mask.width; x++) {
        const [r, g, b] = DEFAULT_PALETTE[mask.data[y * mask.width + x] % DEFAULT_PALETTE.length];
        ctx.fillStyle = `rgb(${r},${g},${b})`;
        ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
      }
    }
  }

  private drawDiffOverlay(before: MaskRaster, after: MaskRaster): void {
    const { region } = after.diff(before);
    this.diffCanvas.width = after.width * SCALE;
    this.diffCanvas.height = after.height * SCALE;
    const ctx = this.diffCanvas.getContext("2d")!;
    ctx.clearRect(0, 0, this.diffCanvas.width, this.diffCanvas.height);
    ctx.fillStyle = "rgba(255, 40, 40, 0.6)";
    for (let y = 0; y < after.height; y++) {
      for (let x = 0; x < after.width; x++) {
        if (region[y * after.width + x]) {
          ctx.fillRect(x * SCALE, y * SCALE, SCALE, SCALE);
        }
      }
    }
  }

  private async invert(): Promise<void> {
    if (!this.session.checkpointId || !this.session.mask) return;
    const rgbB64 = this.renderImg.src.split(",")[1];
    const resp = await this.client.invert({
      checkpoint_id: this.session.checkpointId,
      target_image: rgbB64,
      target_mask: encodeBase64(this.baseLabels!.toPng()),
      pose: this.session.pose,
      steps: Number(el<HTMLInputElement>("invert-steps").value) || 200,
    });
    this.session.jobIds.push(resp.job_id);
    this.persist();
    this.setStatus(`inversion job ${resp.job_id} running…`);
    const record = await this.poller.poll(resp.job_id, {
      onUpdate: (r, shown) => {
        this.progressEl.value = shown;
        const tail = r.trace_tail.at(-1);
        if (tail) this.setStatus(`invert ${Math.round(shown * 100)}%: mIoU ${tail.miou?.toFixed(3)}`);
      },
    });
    if (record.state === "failed") throw new Error(record.error ?? "inversion failed");
    this.session.inversionId = record.id;
    this.persist();
    this.setStatus(`inversion done: mIoU ${record.artifacts.final_miou}`);
  }

  private async submitEdit(): Promise<void> {
    if (!this.session.checkpointId || !this.session.inversionId || !this.session.mask) {
      throw new Error("invert the current render before editing");
    }
    const resp = await this.client.submitEdit({
      checkpoint_id: this.session.checkpointId,
      inversion_id: this.session.inversionId,
      edited_mask_png: encodeBase64(this.session.mask.toPng()),
      steps: Number(el<HTMLInputElement>("edit-steps").value) || 200,
    });
    this.session.jobIds.push(resp.job_id);
    this.persist();
    const record = await this.poller.poll(resp.job_id, {
      onUpdate: (_r, shown) => {
        this.progressEl.value = shown;
      },
    });
    if (record.state === "failed") throw new Error(record.error ?? "edit failed");
    this.beforeImg.src = `${this.client.base}/jobs/${record.id}/artifacts/before.png`;
    this.afterImg.src = `${this.client.base}/jobs/${record.id}/artifacts/after.png`;
    if (this.baseLabels && this.session.mask) {
      this.drawDiffOverlay(this.baseLabels, this.session.mask);
    }
    const changed = record.artifacts.changed_pixels;
    this.setStatus(
      record.artifacts.zero_diff
        ? "edit was a no-op: mask unchanged (zero-diff)"
        : `edit done: ${changed} pixels changed`,
    );
  }

  private async resample(group: number): Promise<void> {
    if (!this.session.checkpointId || !this.session.zGroups) return;
    const fresh = gaussian(this.session.zGroups[group].length);
    const req = this.panel.resampleRequest(this.session.checkpointId, this.session.pose, group, fresh);
    const resp = await this.client.render(req);
    this.afterRender(resp);
    this.panel.setBase(resp.z, resp.z_i);
    this.session.zGroups = resp.z_i;
    this.persist();
    this.setStatus(`resampled ${GROUP_NAMES[group]}`);
  }

  private async interpolate(group: number, t: number): Promise<void> {
    if (!this.session.checkpointId) return;
    if (!this.panel.targets[group]) {
      this.panel.setTarget(group, gaussian(this.session.zGroups![group].length));
    }
    this.panel.setSlider(group, t);
    const req = this.panel.interpolateRequest(this.session.checkpointId, this.session.pose, group);
    const resp = await this.client.render(req);
    this.afterRender(resp);
    this.setStatus(`${GROUP_NAMES[group]} blend t=${t.toFixed(2)}`);
  }
}

window.addEventListener("DOMContentLoaded", () => {
  new Studio();
});
