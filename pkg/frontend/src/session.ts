/**
 * Serializable studio session.
 *
 * Everything needed to restore the editing surface after a reload lives
 * here: checkpoint and inversion ids, latents, pose, the painted mask and
 * submitted job ids. Job states themselves are NOT stored; restore re-reads
 * them from the server's ledger.
 */

import { encodeBase64, decodeBase64, type Pose } from "./api.js";
import type { SfeClient, JobRecord } from "./api.js";
import { MaskRaster } from "./mask.js";

export interface SessionSnapshot {
  checkpointId: string | null;
  inversionId: string | null;
  pose: Pose;
  z: number[] | null;
  zGroups: number[][] | null;
  mask: { width: number; height: number; numGroups: number; data: string } | null;
  jobIds: string[];
}

export class StudioSession {
  checkpointId: string | null = null;
  inversionId: string | null = null;
  pose: Pose = { pitch: 0, yaw: 0, roll: 0 };
  z: number[] | null = null;
  zGroups: number[][] | null = null;
  mask: MaskRaster | null = null;
  jobIds: string[] = [];

  serialize(): string {
    const snapshot: SessionSnapshot = {
      checkpointId: this.checkpointId,
      inversionId: this.inversionId,
      pose: this.pose,
      z: this.z,
      zGroups: this.zGroups,
      mask: this.mask
        ? {
            width: this.mask.width,
            height: this.mask.height,
            numGroups: this.mask.numGroups,
            data: encodeBase64(this.mask.data),
          }
        : null,
      jobIds: this.jobIds,
    };
    return JSON.stringify(snapshot);
  }

  static restore(json: string): StudioSession {
    const snapshot = JSON.parse(json) as SessionSnapshot;
    const session = new StudioSession();
    session.checkpointId = snapshot.checkpointId;
    session.inversionId = snapshot.inversionId;
    session.pose = snapshot.pose;
    session.z = snapshot.z;
    session.zGroups = snapshot.zGroups;
    session.jobIds = snapshot.jobIds ?? [];
    if (snapshot.mask) {
      session.mask = MaskRaster.fromLabels(
        decodeBase64(snapshot.mask.data),
        snapshot.mask.width,
        snapshot.mask.height,
        snapshot.mask.numGroups,
      );
    }
    return session;
  }

  /** Re-read this session's jobs from the server ledger. */
  async refreshJobs(client: SfeClient): Promise<JobRecord[]> {
    const records: JobRecord[] = [];
    for (const id of this.jobIds) {
      records.push(await client.job(id));
    }
    return records;
  }
}
