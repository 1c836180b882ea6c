/**
 * Browser shell wiring the workbench together.
 *
 * All interaction logic lives in the DOM-free modules (transform, overlay,
 * controller, table); this file only decodes PNGs via canvas, routes input
 * events, and renders.  The overlay is redrawn exclusively from
 * server-confirmed mask versions — there is no optimistic local mutation —
 * and large frames are drawn in tiles so zooming stays responsive.
 *
 * Shortcuts: U = undo, Tab = toggle click polarity, E = export CSV.
 */

import { ApiError, WorkbenchClient } from "./api.js";
import { WorkbenchController } from "./controller.js";
import {
  compositeOverlay,
  compositeParticles,
  particleTint,
  type GrayMask,
  type RgbaRaster,
} from "./overlay.js";
import {
  PARTICLE_COLUMNS,
  cellText,
  downloadCsv,
  sortParticles,
  type ParticleColumn,
  type SortDirection,
} from "./table.js";
import { centerOn, imageToScreen, panBy, zoomAt, type Point } from "./transform.js";
import type { BundleInfo, ClassifyItem, ModelInfo, ParticleRow } from "./types.js";

/** Keep individual drawImage calls below this edge length when tiling. */
const TILE_PX = 2048;
/** Source images wider/taller than this are always drawn tiled. */
const TILING_THRESHOLD = 4096;

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const canvas = $<HTMLCanvasElement>("viewport");
const ctx = canvas.getContext("2d")!;
const fileInput = $<HTMLInputElement>("file-input");
const bundleSelect = $<HTMLSelectElement>("bundle-select");
const modelSelect = $<HTMLSelectElement>("model-select");
const opacitySlider = $<HTMLInputElement>("opacity-slider");
const nmInput = $<HTMLInputElement>("nm-input");
const minSizeInput = $<HTMLInputElement>("minsize-input");
const quantifyBtn = $<HTMLButtonElement>("quantify-btn");
const classifyBtn = $<HTMLButtonElement>("classify-btn");
const exportBtn = $<HTMLButtonElement>("export-btn");
const undoBtn = $<HTMLButtonElement>("undo-btn");
const polarityBadge = $<HTMLSpanElement>("polarity-badge");
const statusBar = $<HTMLDivElement>("status-bar");
const tableContainer = $<HTMLDivElement>("table-container");
const toastContainer = $<HTMLDivElement>("toast-container");

const apiBase = new URLSearchParams(location.search).get("api") ?? "";
const client = new WorkbenchClient(apiBase);

// -- mutable page state -----------------------------------------------------

let imageRaster: RgbaRaster | null = null;
let maskRaster: GrayMask | null = null;
/** Mask version the current maskRaster corresponds to (fetch-order guard). */
let maskRasterVersion = 0;
let particleRows: ParticleRow[] = [];
let particleMasks: GrayMask[] = [];
let classLabels = new Map<string, ClassifyItem>();
let sortColumn: ParticleColumn = "particle_id";
let sortDirection: SortDirection = "asc";
let bundles: BundleInfo[] = [];
let models: ModelInfo[] = [];

const controller = new WorkbenchController(client, {
  onMask: (resp) => {
    void refreshMask(resp.mask_url, resp.mask_version);
    renderStatus();
  },
  onToast: showToast,
  onTable: (resp) => {
    particleRows = resp.particles;
    classLabels = new Map();
    void loadParticleMasks(resp.particles);
    renderTable();
  },
});

// -- decoding ---------------------------------------------------------------

async function decodeRgba(bytes: Uint8Array): Promise<RgbaRaster> {
  const bitmap = await createImageBitmap(new Blob([bytes as BlobPart]));
  const off = document.createElement("canvas");
  off.width = bitmap.width;
  off.height = bitmap.height;
  const c = off.getContext("2d")!;
  c.drawImage(bitmap, 0, 0);
  const data = c.getImageData(0, 0, bitmap.width, bitmap.height);
  bitmap.close();
  return { width: data.width, height: data.height, data: data.data };
}

async function decodeMask(bytes: Uint8Array): Promise<GrayMask> {
  const rgba = await decodeRgba(bytes);
  const gray = new Uint8Array(rgba.width * rgba.height);
  for (let i = 0; i < gray.length; i++) {
    gray[i] = rgba.data[i * 4];
  }
  return { width: rgba.width, height: rgba.height, data: gray };
}

async function refreshMask(maskUrl: string, version: number): Promise<void> {
  try {
    const bytes = await client.fetchBytes(maskUrl);
    const mask = await decodeMask(bytes);
    // responses can finish out of order; never replace a newer mask
    if (version >= maskRasterVersion) {
      maskRaster = mask;
      maskRasterVersion = version;
      particleRows = [];
      particleMasks = [];
      classLabels = new Map();
      renderTable();
      render();
    }
  } catch (err) {
    showToast("error", `mask fetch failed: ${message(err)}`);
  }
}

async function loadParticleMasks(rows: ParticleRow[]): Promise<void> {
  try {
    const decoded = await Promise.all(
      rows.map(async (row) => decodeMask(await client.fetchBytes(`/v1/masks/${row.mask_id}`))),
    );
    particleMasks = decoded;
    render();
  } catch (err) {
    showToast("error", `particle masks failed: ${message(err)}`);
  }
}

// -- rendering --------------------------------------------------------------

const compositeCanvas = document.createElement("canvas");

function render(): void {
  const rect = canvas.getBoundingClientRect();
  canvas.width = rect.width;
  canvas.height = rect.height;
  ctx.fillStyle = "#111827";
  ctx.fillRect(0, 0, canvas.width, canvas.height);
  if (!imageRaster) {
    renderStatus();
    return;
  }

  let composite: RgbaRaster = imageRaster;
  const opacity = controller.view.overlayOpacity;
  if (particleMasks.length > 0) {
    const selected = particleRows.findIndex(
      (r) => r.particle_id === controller.view.selectedParticle,
    );
    composite = compositeParticles(
      imageRaster,
      particleMasks,
      opacity,
      undefined,
      selected >= 0 ? selected : null,
    );
  } else if (maskRaster) {
    composite = compositeOverlay(imageRaster, maskRaster, opacity);
  }

  compositeCanvas.width = composite.width;
  compositeCanvas.height = composite.height;
  compositeCanvas
    .getContext("2d")!
    .putImageData(
      new ImageData(new Uint8ClampedArray(composite.data), composite.width, composite.height),
      0,
      0,
    );

  ctx.imageSmoothingEnabled = controller.view.zoom < 1;
  drawTiled(composite.width, composite.height);
  drawBadges();
  renderStatus();
}

/** Draw the composite through the view transform, tiling large sources. */
function drawTiled(srcWidth: number, srcHeight: number): void {
  const view = controller.view;
  const tile = Math.max(srcWidth, srcHeight) > TILING_THRESHOLD ? TILE_PX : TILING_THRESHOLD;
  for (let sy = 0; sy < srcHeight; sy += tile) {
    for (let sx = 0; sx < srcWidth; sx += tile) {
      const sw = Math.min(tile, srcWidth - sx);
      const sh = Math.min(tile, srcHeight - sy);
      const origin = imageToScreen({ x: sx, y: sy }, view);
      const dw = sw * view.zoom;
      const dh = sh * view.zoom;
      if (origin.x > canvas.width || origin.y > canvas.height || origin.x + dw < 0 || origin.y + dh < 0) {
        continue;
      }
      ctx.drawImage(compositeCanvas, sx, sy, sw, sh, origin.x, origin.y, dw, dh);
    }
  }
}

function drawBadges(): void {
  if (classLabels.size === 0) return;
  ctx.font = "12px system-ui, sans-serif";
  ctx.textBaseline = "middle";
  particleRows.forEach((row, i) => {
    const item = classLabels.get(row.mask_id);
    if (!item) return;
    const pos = imageToScreen({ x: row.centroid_x, y: row.centroid_y }, controller.view);
    const text = `${item.label} ${(item.confidence * 100).toFixed(0)}%`;
    const w = ctx.measureText(text).width + 10;
    const tint = particleTint(i);
    ctx.fillStyle = `rgba(${tint.r}, ${tint.g}, ${tint.b}, 0.85)`;
    ctx.fillRect(pos.x - w / 2, pos.y - 10, w, 20);
    ctx.fillStyle = "#ffffff";
    ctx.fillText(text, pos.x - w / 2 + 5, pos.y);
  });
}

function renderStatus(): void {
  const v = controller.view;
  const parts = [
    imageRaster ? `${imageRaster.width}×${imageRaster.height}` : "no image",
    `zoom ${(v.zoom * 100).toFixed(0)}%`,
    `mask v${v.maskVersion}`,
    controller.latestMask ? `${controller.latestMask.foreground_px} px foreground` : "empty mask",
    `${controller.clickLog.length} click(s)`,
  ];
  statusBar.textContent = parts.join("  ·  ");
  polarityBadge.textContent = v.polarity;
  polarityBadge.className = `badge ${v.polarity}`;
}

// -- particle table ---------------------------------------------------------

function renderTable(): void {
  tableContainer.replaceChildren();
  if (particleRows.length === 0) {
    const empty = document.createElement("p");
    empty.className = "muted";
    empty.textContent = "No particles yet — segment, then quantify.";
    tableContainer.append(empty);
    return;
  }

  const table = document.createElement("table");
  const thead = document.createElement("thead");
  const headRow = document.createElement("tr");
  for (const column of PARTICLE_COLUMNS) {
    const th = document.createElement("th");
    const marker = column === sortColumn ? (sortDirection === "asc" ? " ▲" : " ▼") : "";
    th.textContent = column + marker;
    th.addEventListener("click", () => {
      if (sortColumn === column) {
        sortDirection = sortDirection === "asc" ? "desc" : "asc";
      } else {
        sortColumn = column;
        sortDirection = "asc";
      }
      renderTable();
    });
    headRow.append(th);
  }
  thead.append(headRow);
  table.append(thead);

  const tbody = document.createElement("tbody");
  const rows = sortParticles(withClassColumns(particleRows), sortColumn, sortDirection);
  for (const row of rows) {
    const tr = document.createElement("tr");
    if (row.particle_id === controller.view.selectedParticle) {
      tr.className = "selected";
    }
    for (const column of PARTICLE_COLUMNS) {
      const td = document.createElement("td");
      td.textContent = cellText(row, column);
      tr.append(td);
    }
    tr.addEventListener("click", () => {
      controller.selectParticle(row.particle_id);
      controller.view = centerOn(
        controller.view,
        { x: row.centroid_x, y: row.centroid_y },
        canvas.width,
        canvas.height,
        Math.max(controller.view.zoom, 4),
      );
      renderTable();
      render();
    });
    tbody.append(tr);
  }
  table.append(tbody);
  tableContainer.append(table);
}

/** Rows with classification results merged in once /classify has run. */
function withClassColumns(rows: ParticleRow[]): ParticleRow[] {
  if (classLabels.size === 0) return rows;
  return rows.map((row) => {
    const item = classLabels.get(row.mask_id);
    return item
      ? { ...row, class_label: item.label, class_confidence: item.confidence }
      : row;
  });
}

// -- toasts -----------------------------------------------------------------

function showToast(kind: "info" | "error", text: string): void {
  const toast = document.createElement("div");
  toast.className = `toast ${kind}`;
  toast.textContent = text;
  toastContainer.append(toast);
  setTimeout(() => toast.remove(), 4000);
}

function message(err: unknown): string {
  if (err instanceof ApiError) return `${err.code}: ${err.message}`;
  return err instanceof Error ? err.message : String(err);
}

// -- actions ----------------------------------------------------------------

async function openFile(file: File): Promise<void> {
  try {
    const bytes = new Uint8Array(await file.arrayBuffer());
    const { image } = await controller.openImage(
      bytes,
      bundleSelect.value || "synthetic-segmenter",
      file.type || "application/octet-stream",
    );
    imageRaster = await decodeRgba(bytes);
    maskRaster = null;
    maskRasterVersion = 0;
    particleRows = [];
    particleMasks = [];
    classLabels = new Map();
    const fit = Math.min(canvas.width / image.width, canvas.height / image.height, 8);
    controller.view = centerOn(
      controller.view,
      { x: image.width / 2, y: image.height / 2 },
      canvas.width,
      canvas.height,
      fit,
    );
    renderTable();
    render();
    showToast("info", `loaded ${image.width}×${image.height} as ${image.image_id}`);
  } catch (err) {
    showToast("error", `open failed: ${message(err)}`);
  }
}

async function runQuantify(): Promise<void> {
  const nmPerPixel = Number(nmInput.value);
  const minSize = Number(minSizeInput.value);
  if (!(nmPerPixel > 0)) {
    showToast("error", "calibration must be a positive nm/pixel value");
    return;
  }
  await controller.quantify({ nm_per_pixel: nmPerPixel, min_size: minSize });
}

async function runClassify(): Promise<void> {
  const imageId = controller.view.imageId;
  if (!imageId || particleRows.length === 0) {
    showToast("info", "quantify first, then classify the particles");
    return;
  }
  const modelId = modelSelect.value;
  if (!modelId) {
    showToast("info", "no trained model registered on the server");
    return;
  }
  const featureBundle = bundles.find((b) => b.kind === "feature-encoder");
  try {
    const resp = await client.classify({
      image_id: imageId,
      mask_ids: particleRows.map((r) => r.mask_id),
      bundle: featureBundle?.name ?? "synthetic-features",
      model_id: modelId,
    });
    classLabels = new Map(resp.results.map((item) => [item.mask_id, item]));
    renderTable();
    render();
  } catch (err) {
    showToast("error", `classify failed: ${message(err)}`);
  }
}

async function runExport(): Promise<void> {
  if (!controller.lastQuantify) {
    showToast("info", "run quantify before exporting");
    return;
  }
  const bytes = await downloadCsv(client, controller.lastQuantify.csv_url);
  const url = URL.createObjectURL(new Blob([bytes as BlobPart], { type: "text/csv" }));
  const a = document.createElement("a");
  a.href = url;
  a.download = "particles.csv";
  a.click();
  URL.revokeObjectURL(url);
}

// -- input wiring -----------------------------------------------------------

fileInput.addEventListener("change", () => {
  const file = fileInput.files?.[0];
  if (file) void openFile(file);
});

canvas.addEventListener("click", (ev) => {
  if (panning || !controller.sessionId) return;
  void controller.clickAtScreen(eventPoint(ev), 0);
});

canvas.addEventListener("contextmenu", (ev) => {
  ev.preventDefault();
  if (!controller.sessionId) return;
  void controller.clickAtScreen(eventPoint(ev), 2);
});

canvas.addEventListener("wheel", (ev) => {
  ev.preventDefault();
  const factor = ev.deltaY < 0 ? 1.2 : 1 / 1.2;
  controller.view = zoomAt(controller.view, eventPoint(ev), factor);
  render();
}, { passive: false });

let panning = false;
let panLast: Point = { x: 0, y: 0 };

canvas.addEventListener("mousedown", (ev) => {
  if (ev.button === 1 || (ev.button === 0 && ev.shiftKey)) {
    ev.preventDefault();
    panning = true;
    panLast = eventPoint(ev);
  }
});

window.addEventListener("mousemove", (ev) => {
  if (!panning) return;
  const p = eventPoint(ev);
  controller.view = panBy(controller.view, p.x - panLast.x, p.y - panLast.y);
  panLast = p;
  render();
});

window.addEventListener("mouseup", () => {
  // delay so the click handler sees the pan flag before it clears
  if (panning) setTimeout(() => { panning = false; }, 0);
});

window.addEventListener("keydown", (ev) => {
  if (ev.target instanceof HTMLInputElement || ev.target instanceof HTMLSelectElement) return;
  if (ev.key === "u" || ev.key === "U") {
    void controller.undo();
  } else if (ev.key === "Tab") {
    ev.preventDefault();
    controller.togglePolarity();
    renderStatus();
  } else if (ev.key === "e" || ev.key === "E") {
    void runExport();
  }
});

function eventPoint(ev: MouseEvent): Point {
  const rect = canvas.getBoundingClientRect();
  return { x: ev.clientX - rect.left, y: ev.clientY - rect.top };
}

opacitySlider.addEventListener("input", () => {
  controller.view = { ...controller.view, overlayOpacity: Number(opacitySlider.value) / 100 };
  render();
});

quantifyBtn.addEventListener("click", () => void runQuantify());
classifyBtn.addEventListener("click", () => void runClassify());
exportBtn.addEventListener("click", () => void runExport());
undoBtn.addEventListener("click", () => void controller.undo());
window.addEventListener("resize", render);

// -- startup ----------------------------------------------------------------

async function populatePickers(): Promise<void> {
  try {
    bundles = await client.listBundles();
    bundleSelect.replaceChildren(
      ...bundles
        .filter((b) => b.has_decoder)
        .map((b) => new Option(`${b.name} (${b.input_size}px)`, b.name)),
    );
    models = await client.listModels();
    modelSelect.replaceChildren(
      new Option("— no model —", ""),
      ...models.map((m) => new Option(`${m.architecture} · ${m.class_names.join("/")}`, m.model_id)),
    );
    if (models.length > 0) modelSelect.value = models[0].model_id;
  } catch (err) {
    showToast("error", `service unreachable: ${message(err)}`);
  }
}

void populatePickers();
renderTable();
render();
