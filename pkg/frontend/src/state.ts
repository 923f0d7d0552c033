/** View-state store: single in-flight mutation, stale-revision recovery.
 *
 * Invariants: the rendered revision never exceeds the server revision, and
 * a 409 (stale revision) always triggers a refetch — never a silent local
 * overwrite.
 */

import {
  MorphClient,
  MorphOp,
  SessionState,
  StaleRevisionError,
  TrainResult,
} from "./api.js";

export type Tool =
  | { kind: "add"; classLabel: number }
  | { kind: "remove" }
  | { kind: "inspect" };

export interface ViewState {
  sessionId: string | null;
  revision: number;
  state: SessionState | null;
  tool: Tool;
  busy: boolean;
  lastError: string | null;
  refetchCount: number;
  staleCount: number;
}

export function initialViewState(): ViewState {
  return {
    sessionId: null,
    revision: -1,
    state: null,
    tool: { kind: "inspect" },
    busy: false,
    lastError: null,
    refetchCount: 0,
    staleCount: 0,
  };
}

export class Store {
  view: ViewState = initialViewState();
  private listeners: Array<(v: ViewState) => void> = [];

  constructor(
    private client: MorphClient,
    private grid = 200,
  ) {}

  subscribe(fn: (v: ViewState) => void): void {
    this.listeners.push(fn);
  }

  private emit(): void {
    for (const fn of this.listeners) fn(this.view);
  }

  setTool(tool: Tool): void {
    this.view.tool = tool;
    this.emit();
  }

  async open(sessionId: string): Promise<void> {
    this.view.sessionId = sessionId;
    await this.refetch();
  }

  async refetch(): Promise<void> {
    if (!this.view.sessionId) throw new Error("no session open");
    const state = await this.client.getState(this.view.sessionId, this.grid);
    // never render backwards: a concurrent writer may have bumped the
    // server; the fetched snapshot is the newest we have seen
    if (state.revision >= this.view.revision) {
      this.view.state = state;
      this.view.revision = state.revision;
    }
    this.view.refetchCount += 1;
    this.emit();
  }

  /** Run one mutation; on stale revision, refetch and report. */
  async mutate(op: MorphOp): Promise<boolean> {
    if (!this.view.sessionId || this.view.busy) return false;
    this.view.busy = true;
    this.emit();
    try {
      await this.client.morph(this.view.sessionId, op, this.view.revision);
      await this.refetch();
      this.view.lastError = null;
      return true;
    } catch (e) {
      if (e instanceof StaleRevisionError) {
        this.view.staleCount += 1;
        this.view.lastError = "revision was stale; state reloaded";
        await this.refetch();
        return false;
      }
      this.view.lastError = String(e);
      this.emit();
      throw e;
    } finally {
      this.view.busy = false;
      this.emit();
    }
  }

  async train(steps: number): Promise<TrainResult | null> {
    if (!this.view.sessionId || this.view.busy) return null;
    this.view.busy = true;
    this.emit();
    try {
      const result = await this.client.train(this.view.sessionId, steps);
      await this.refetch();
      this.view.lastError = null;
      return result;
    } catch (e) {
      if (e instanceof StaleRevisionError) {
        this.view.staleCount += 1;
        await this.refetch();
        return null;
      }
      this.view.lastError = String(e);
      this.emit();
      throw e;
    } finally {
      this.view.busy = false;
      this.emit();
    }
  }
}
