/**
 * Job polling: repeatedly fetch a job record until it reaches a terminal
 * state. Progress shown to the user is clamped non-decreasing client-side,
 * mirroring the server's monotonicity contract.
 */

import type { JobRecord } from "./api.js";

export interface PollOptions {
  intervalMs?: number;
  timeoutMs?: number;
  onUpdate?: (record: JobRecord, shownProgress: number) => void;
  sleep?: (ms: number) => Promise<void>;
}

const defaultSleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

export class JobPoller {
  /** progress values handed to onUpdate during the most recent poll run */
  observed: number[] = [];

  constructor(private getJob: (id: string) => Promise<JobRecord>) {}

  async poll(id: string, options: PollOptions = {}): Promise<JobRecord> {
    const interval = options.intervalMs ?? 500;
    const timeout = options.timeoutMs ?? 30 * 60 * 1000;
    const sleep = options.sleep ?? defaultSleep;
    const started = Date.now();
    let shown = 0;
    this.observed = [];
    for (;;) {
      const record = await this.getJob(id);
      shown = Math.max(shown, record.progress);
      if (record.state === "done") shown = 1;
      this.observed.push(shown);
      options.onUpdate?.(record, shown);
      if (record.state === "done" || record.state === "failed") {
        return record;
      }
      if (Date.now() - started > timeout) {
        throw new Error(`job ${id} timed out after ${timeout} ms`);
      }
      await sleep(interval);
    }
  }
}
