import { describe, expect, it } from "vitest";

import {
  PARTICLE_COLUMNS,
  cellText,
  downloadCsv,
  sortParticles,
  tableRows,
} from "../src/table.js";
import type { ParticleRow, QuantifyResponse } from "../src/types.js";

function row(overrides: Partial<ParticleRow>): ParticleRow {
  return {
    particle_id: 1,
    area_px: 100,
    area_nm2: 400,
    equiv_diam_nm: 22.5,
    aspect_ratio: 1.5,
    feret_nm: 30,
    centroid_x: 10,
    centroid_y: 12,
    bbox: [0, 0, 10, 10],
    class_label: null,
    class_confidence: null,
    mask_id: "m1",
    ...overrides,
  };
}

const ROWS: ParticleRow[] = [
  row({ particle_id: 1, feret_nm: 30, class_label: "Fiber", class_confidence: 0.9 }),
  row({ particle_id: 2, feret_nm: 75.5, mask_id: "m2", class_label: null }),
  row({ particle_id: 3, feret_nm: 12.25, mask_id: "m3", class_label: "Cluster", class_confidence: 0.6 }),
  row({ particle_id: 4, feret_nm: 75.5, mask_id: "m4", class_label: "Matrix", class_confidence: 0.7 }),
];

describe("column schema", () => {
  it("mirrors the CSV export header exactly", () => {
    expect(PARTICLE_COLUMNS.join(",")).toBe(
      "particle_id,area_px,area_nm2,equiv_diam_nm,aspect_ratio,feret_nm," +
        "centroid_x,centroid_y,class_label,class_confidence",
    );
  });

  it("renders one table row per particle in the response", () => {
    const response: QuantifyResponse = {
      nm_per_pixel: 2,
      calibration_source: "manual",
      count: 2,
      particles: ROWS.slice(0, 2),
      csv_url: "/v1/exports/abc",
    };
    expect(tableRows(response)).toHaveLength(2);
    expect(tableRows(response)).toBe(response.particles); // no copy, no reorder
  });
});

describe("sortParticles", () => {
  it("sorts by feret_nm descending into a monotone column", () => {
    const sorted = sortParticles(ROWS, "feret_nm", "desc");
    const ferets = sorted.map((r) => r.feret_nm);
    for (let i = 1; i < ferets.length; i++) {
      expect(ferets[i]).toBeLessThanOrEqual(ferets[i - 1]);
    }
    expect(ferets[0]).toBe(75.5);
    expect(ferets.at(-1)).toBe(12.25);
  });

  it("is stable for ties", () => {
    const sorted = sortParticles(ROWS, "feret_nm", "desc");
    const tied = sorted.filter((r) => r.feret_nm === 75.5).map((r) => r.particle_id);
    expect(tied).toEqual([2, 4]); // original order preserved within the tie
  });

  it("does not mutate the input", () => {
    const before = ROWS.map((r) => r.particle_id);
    sortParticles(ROWS, "area_px", "asc");
    expect(ROWS.map((r) => r.particle_id)).toEqual(before);
  });

  it("sorts string columns lexically", () => {
    const sorted = sortParticles(ROWS, "class_label", "asc");
    const labels = sorted.map((r) => r.class_label);
    expect(labels.slice(0, 3)).toEqual(["Cluster", "Fiber", "Matrix"]);
  });

  it("sinks null class fields to the bottom in either direction", () => {
    for (const direction of ["asc", "desc"] as const) {
      const sorted = sortParticles(ROWS, "class_confidence", direction);
      expect(sorted.at(-1)?.class_confidence).toBeNull();
    }
  });
});

describe("cellText", () => {
  it("renders nulls as a dash and numbers compactly", () => {
    expect(cellText(ROWS[1], "class_label")).toBe("—");
    expect(cellText(ROWS[0], "particle_id")).toBe("1");
    expect(cellText(ROWS[2], "feret_nm")).toBe("12.2500");
  });
});

describe("downloadCsv", () => {
  it("passes the server bytes through untouched", async () => {
    // CRLF, trailing blank line and odd spacing must all survive
    const served = new TextEncoder().encode("a,b\r\n1, 2\r\n\r\n");
    let requested: string | null = null;
    const client = {
      fetchBytes: async (path: string) => {
        requested = path;
        return served;
      },
    };
    const got = await downloadCsv(client, "/v1/exports/deadbeef");
    expect(requested).toBe("/v1/exports/deadbeef");
    expect(got).toBe(served); // the very same buffer, not a re-encoded copy
  });
});
