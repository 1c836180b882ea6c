/**
 * DOM-free interaction logic for the workbench.
 *
 * The controller owns the view state and the session lifecycle and enforces
 * the interaction contract end to end:
 *
 *  - clicks are mapped through the inverse view transform and posted to the
 *    server strictly in the order the user issued them (an internal promise
 *    queue serializes them even when the caller does not await);
 *  - the click log only records server-confirmed clicks, so a network
 *    failure leaves local state exactly as it was;
 *  - the displayed mask version never regresses: stale responses are
 *    ignored rather than applied out of order;
 *  - an undo refused by the server (empty history) surfaces as a toast and
 *    changes nothing.
 */

import { ApiError } from "./api.js";
import {
  createViewState,
  screenToImage,
  togglePolarity,
  type Point,
  type ViewState,
} from "./transform.js";
import type {
  ClickBody,
  ImageUploadResponse,
  MaskResponse,
  Polarity,
  QuantifyRequest,
  QuantifyResponse,
  SessionCreateResponse,
} from "./types.js";

/** The slice of the API client the controller needs; satisfied by WorkbenchClient. */
export interface SessionApi {
  uploadImage(bytes: Uint8Array | Blob, contentType?: string): Promise<ImageUploadResponse>;
  createSession(imageId: string, bundle: string): Promise<SessionCreateResponse>;
  addClick(sessionId: string, click: ClickBody): Promise<MaskResponse>;
  undoClick(sessionId: string): Promise<MaskResponse>;
  quantify(sessionId: string, req: QuantifyRequest): Promise<QuantifyResponse>;
  fetchBytes(path: string): Promise<Uint8Array>;
}

export type ToastKind = "info" | "error";

export interface ControllerEvents {
  /** Fired once per newly applied (strictly newer) mask version. */
  onMask?: (resp: MaskResponse) => void;
  onToast?: (kind: ToastKind, message: string) => void;
  onTable?: (resp: QuantifyResponse) => void;
}

export class WorkbenchController {
  view: ViewState = createViewState();
  sessionId: string | null = null;
  /** Server-confirmed clicks in user order; mirrors the session history. */
  readonly clickLog: ClickBody[] = [];
  latestMask: MaskResponse | null = null;
  lastQuantify: QuantifyResponse | null = null;

  private queue: Promise<unknown> = Promise.resolve();

  constructor(
    private readonly client: SessionApi,
    private readonly events: ControllerEvents = {},
  ) {}

  /** Upload an image and open a fresh segmentation session on it. */
  async openImage(
    bytes: Uint8Array | Blob,
    bundle = "synthetic-segmenter",
    contentType = "image/png",
  ): Promise<{ image: ImageUploadResponse; session: SessionCreateResponse }> {
    const image = await this.client.uploadImage(bytes, contentType);
    const session = await this.client.createSession(image.image_id, bundle);
    this.view = createViewState(image.image_id);
    this.sessionId = session.session_id;
    this.clickLog.length = 0;
    this.latestMask = null;
    this.lastQuantify = null;
    return { image, session };
  }

  /**
   * Map a screen click through the current view and post it.  The secondary
   * mouse button always prompts negative; the primary button uses the active
   * polarity (so trackpad users can Tab-toggle instead of right-clicking).
   */
  clickAtScreen(p: Point, button = 0): Promise<boolean> {
    const image = screenToImage(p, this.view);
    const polarity: Polarity = button === 2 ? "negative" : this.view.polarity;
    return this.postClick({
      x: Math.round(image.x),
      y: Math.round(image.y),
      polarity,
    });
  }

  /** Post an image-space click; resolves true once the new mask is applied. */
  postClick(click: ClickBody): Promise<boolean> {
    return this.enqueue(async () => {
      const sessionId = this.requireSession();
      try {
        const resp = await this.client.addClick(sessionId, click);
        this.clickLog.push(click);
        return this.applyMask(resp);
      } catch (err) {
        this.toast("error", `click failed: ${describe(err)}`);
        return false;
      }
    });
  }

  /** Undo the last click; an empty-history refusal is a no-op with a toast. */
  undo(): Promise<boolean> {
    return this.enqueue(async () => {
      const sessionId = this.requireSession();
      try {
        const resp = await this.client.undoClick(sessionId);
        this.clickLog.pop();
        return this.applyMask(resp);
      } catch (err) {
        if (err instanceof ApiError && err.status === 409) {
          this.toast("info", "nothing to undo");
        } else {
          this.toast("error", `undo failed: ${describe(err)}`);
        }
        return false;
      }
    });
  }

  /**
   * Adopt a mask response unless something newer is already on screen.
   * Returns whether the response became the displayed version.
   */
  applyMask(resp: MaskResponse): boolean {
    if (resp.mask_version <= this.view.maskVersion) {
      return false;
    }
    this.view = { ...this.view, maskVersion: resp.mask_version };
    this.latestMask = resp;
    this.events.onMask?.(resp);
    return true;
  }

  togglePolarity(): Polarity {
    this.view = togglePolarity(this.view);
    return this.view.polarity;
  }

  selectParticle(particleId: number | null): void {
    this.view = { ...this.view, selectedParticle: particleId };
  }

  /** Run quantification; failures toast and resolve to null. */
  async quantify(req: QuantifyRequest): Promise<QuantifyResponse | null> {
    const sessionId = this.requireSession();
    try {
      const resp = await this.client.quantify(sessionId, req);
      this.lastQuantify = resp;
      this.events.onTable?.(resp);
      return resp;
    } catch (err) {
      this.toast("error", `quantify failed: ${describe(err)}`);
      return null;
    }
  }

  /** Fetch the last quantification's CSV exactly as the server wrote it. */
  async exportCsv(): Promise<Uint8Array | null> {
    if (this.lastQuantify === null) {
      this.toast("info", "run quantify before exporting");
      return null;
    }
    try {
      return await this.client.fetchBytes(this.lastQuantify.csv_url);
    } catch (err) {
      this.toast("error", `export failed: ${describe(err)}`);
      return null;
    }
  }

  private requireSession(): string {
    if (this.sessionId === null) {
      throw new Error("no active session; open an image first");
    }
    return this.sessionId;
  }

  /** Chain a task behind every previously issued one, failures included. */
  private enqueue<T>(task: () => Promise<T>): Promise<T> {
    const next = this.queue.then(task);
    this.queue = next.catch(() => undefined);
    return next;
  }

  private toast(kind: ToastKind, message: string): void {
    this.events.onToast?.(kind, message);
  }
}

function describe(err: unknown): string {
  if (err instanceof ApiError) {
    return `${err.code}: ${err.message}`;
  }
  if (err instanceof Error) {
    return err.message;
  }
  return String(err);
}
