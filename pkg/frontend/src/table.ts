/**
 * Particle results table: column schema, sorting, and CSV download.
 *
 * The column list mirrors the server's CSV export schema so the on-screen
 * table and the downloaded file always agree.  The download itself is a raw
 * byte pass-through — the client never reformats, re-encodes or re-sorts the
 * exported CSV, whatever order the table happens to be displayed in.
 */

import type { ParticleRow, QuantifyResponse } from "./types.js";

export const PARTICLE_COLUMNS = [
  "particle_id",
  "area_px",
  "area_nm2",
  "equiv_diam_nm",
  "aspect_ratio",
  "feret_nm",
  "centroid_x",
  "centroid_y",
  "class_label",
  "class_confidence",
] as const;

export type ParticleColumn = (typeof PARTICLE_COLUMNS)[number];
export type SortDirection = "asc" | "desc";

/** Rows backing the table, exactly as the quantify response listed them. */
export function tableRows(response: QuantifyResponse): ParticleRow[] {
  return response.particles;
}

/**
 * Return a sorted copy of the rows.  Numeric columns sort numerically,
 * string columns lexically; null class fields always sort after real values
 * so unclassified particles sink to the bottom either way.
 */
export function sortParticles(
  rows: readonly ParticleRow[],
  column: ParticleColumn,
  direction: SortDirection = "asc",
): ParticleRow[] {
  const sign = direction === "desc" ? -1 : 1;
  return [...rows].sort((a, b) => {
    const va = a[column];
    const vb = b[column];
    if (va === null && vb === null) return 0;
    if (va === null) return 1;
    if (vb === null) return -1;
    if (va < vb) return -sign;
    if (va > vb) return sign;
    return 0;
  });
}

/** Display text for one cell; never used for export. */
export function cellText(row: ParticleRow, column: ParticleColumn): string {
  const value = row[column];
  if (value === null) return "—";
  if (typeof value === "number" && !Number.isInteger(value)) {
    return value.toPrecision(6);
  }
  return String(value);
}

/** A client able to fetch a server resource as raw bytes. */
export interface BytesFetcher {
  fetchBytes(path: string): Promise<Uint8Array>;
}

/** Download the exported CSV exactly as the server serialized it. */
export function downloadCsv(client: BytesFetcher, csvUrl: string): Promise<Uint8Array> {
  return client.fetchBytes(csvUrl);
}
