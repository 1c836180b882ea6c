/**
 * View-space geometry for the workbench canvas.
 *
 * The view maps image pixels onto screen pixels with a uniform zoom and a
 * pan offset: screen = image * zoom + pan.  Every piece of interaction code
 * (click mapping, overlay drawing, zoom-to-particle) goes through the two
 * inverse helpers below so the mapping stays consistent everywhere and the
 * round trip screen -> image -> screen is exact up to floating point.
 */

import type { Polarity } from "./types.js";

export interface Point {
  x: number;
  y: number;
}

export interface ViewState {
  /** Server id of the loaded image, or null before the first upload. */
  imageId: string | null;
  /** Screen pixels per image pixel. */
  zoom: number;
  /** Screen position of the image origin. */
  panX: number;
  panY: number;
  /** Mask tint strength in [0, 1]. */
  overlayOpacity: number;
  /** Polarity applied by the primary mouse button. */
  polarity: Polarity;
  /** Latest server-confirmed mask version shown on screen. */
  maskVersion: number;
  /** Particle id highlighted in the overlay and the table, if any. */
  selectedParticle: number | null;
}

export const MIN_ZOOM = 1 / 32;
export const MAX_ZOOM = 64;

export function createViewState(imageId: string | null = null): ViewState {
  return {
    imageId,
    zoom: 1,
    panX: 0,
    panY: 0,
    overlayOpacity: 0.5,
    polarity: "positive",
    maskVersion: 0,
    selectedParticle: null,
  };
}

/** Screen point to image pixel coordinates (floating point, unrounded). */
export function screenToImage(p: Point, view: ViewState): Point {
  return {
    x: (p.x - view.panX) / view.zoom,
    y: (p.y - view.panY) / view.zoom,
  };
}

/** Image pixel to screen coordinates. */
export function imageToScreen(p: Point, view: ViewState): Point {
  return {
    x: p.x * view.zoom + view.panX,
    y: p.y * view.zoom + view.panY,
  };
}

/**
 * Rescale around a screen anchor so the image point under the cursor stays
 * put.  Used by wheel zoom; the factor multiplies the current zoom and is
 * clamped to [MIN_ZOOM, MAX_ZOOM].
 */
export function zoomAt(view: ViewState, anchor: Point, factor: number): ViewState {
  const zoom = clamp(view.zoom * factor, MIN_ZOOM, MAX_ZOOM);
  const scale = zoom / view.zoom;
  return {
    ...view,
    zoom,
    panX: anchor.x - (anchor.x - view.panX) * scale,
    panY: anchor.y - (anchor.y - view.panY) * scale,
  };
}

export function panBy(view: ViewState, dx: number, dy: number): ViewState {
  return { ...view, panX: view.panX + dx, panY: view.panY + dy };
}

/** Place an image point at the center of a canvas, optionally rezooming. */
export function centerOn(
  view: ViewState,
  imagePoint: Point,
  canvasWidth: number,
  canvasHeight: number,
  zoom?: number,
): ViewState {
  const z = clamp(zoom ?? view.zoom, MIN_ZOOM, MAX_ZOOM);
  return {
    ...view,
    zoom: z,
    panX: canvasWidth / 2 - imagePoint.x * z,
    panY: canvasHeight / 2 - imagePoint.y * z,
  };
}

export function togglePolarity(view: ViewState): ViewState {
  return {
    ...view,
    polarity: view.polarity === "positive" ? "negative" : "positive",
  };
}

function clamp(v: number, lo: number, hi: number): number {
  return Math.min(hi, Math.max(lo, v));
}
