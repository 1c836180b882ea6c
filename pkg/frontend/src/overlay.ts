/**
 * Pixel-level mask compositing.
 *
 * All functions operate on raw interleaved-RGBA buffers rather than canvas
 * contexts, so the exact blending arithmetic is testable under node and the
 * browser shell only has to shuttle ImageData in and out.  Foreground pixels
 * are tinted toward a solid color at a given opacity; background pixels are
 * never touched, so opacity 0 is a byte-exact no-op and opacity 1 paints the
 * foreground exactly the tint color.
 */

export interface RgbaRaster {
  width: number;
  height: number;
  /** Interleaved RGBA, length width * height * 4. */
  data: Uint8ClampedArray;
}

export interface GrayMask {
  width: number;
  height: number;
  /** One byte per pixel; any nonzero value is foreground. */
  data: Uint8Array | Uint8ClampedArray;
}

export interface Tint {
  r: number;
  g: number;
  b: number;
}

/** Default foreground tint: green, matching the usual ground-truth overlay. */
export const DEFAULT_TINT: Tint = { r: 0, g: 200, b: 0 };

/** Distinct tints cycled over particles once a mask is split per particle. */
export const PARTICLE_PALETTE: Tint[] = [
  { r: 0, g: 200, b: 0 },
  { r: 220, g: 40, b: 40 },
  { r: 60, g: 110, b: 255 },
  { r: 240, g: 160, b: 0 },
  { r: 170, g: 60, b: 220 },
  { r: 0, g: 190, b: 190 },
  { r: 250, g: 100, b: 180 },
  { r: 150, g: 200, b: 40 },
  { r: 130, g: 90, b: 40 },
  { r: 90, g: 90, b: 90 },
  { r: 255, g: 220, b: 80 },
  { r: 40, g: 70, b: 140 },
];

/** Extra tint strength applied to the selected particle so it stands out. */
const SELECTION_BOOST = 0.35;

export function particleTint(index: number): Tint {
  return PARTICLE_PALETTE[((index % PARTICLE_PALETTE.length) + PARTICLE_PALETTE.length) % PARTICLE_PALETTE.length];
}

/** Expand a one-byte-per-pixel grayscale buffer into an opaque RGBA raster. */
export function rgbaFromGray(width: number, height: number, gray: Uint8Array | Uint8ClampedArray): RgbaRaster {
  if (gray.length !== width * height) {
    throw new Error(`gray buffer length ${gray.length} does not match ${width}x${height}`);
  }
  const data = new Uint8ClampedArray(width * height * 4);
  for (let i = 0; i < gray.length; i++) {
    const v = gray[i];
    data[i * 4] = v;
    data[i * 4 + 1] = v;
    data[i * 4 + 2] = v;
    data[i * 4 + 3] = 255;
  }
  return { width, height, data };
}

/**
 * Tint mask foreground into a copy of the image.
 *
 * out = round((1 - opacity) * src + opacity * tint) on foreground pixels;
 * background and alpha are carried over untouched.
 */
export function compositeOverlay(
  image: RgbaRaster,
  mask: GrayMask,
  opacity: number,
  tint: Tint = DEFAULT_TINT,
): RgbaRaster {
  checkSameSize(image, mask);
  checkOpacity(opacity);
  const out: RgbaRaster = {
    width: image.width,
    height: image.height,
    data: new Uint8ClampedArray(image.data),
  };
  blendInto(out, mask, opacity, tint);
  return out;
}

/**
 * Tint several disjoint particle masks, each with its own color, into a copy
 * of the image.  The selected particle (by index into `masks`) is drawn with
 * boosted opacity so it reads as highlighted.
 */
export function compositeParticles(
  image: RgbaRaster,
  masks: GrayMask[],
  opacity: number,
  tints?: Tint[],
  selectedIndex: number | null = null,
): RgbaRaster {
  checkOpacity(opacity);
  for (const mask of masks) {
    checkSameSize(image, mask);
  }
  const out: RgbaRaster = {
    width: image.width,
    height: image.height,
    data: new Uint8ClampedArray(image.data),
  };
  masks.forEach((mask, i) => {
    const tint = tints?.[i] ?? particleTint(i);
    const alpha = i === selectedIndex ? Math.min(1, opacity + SELECTION_BOOST) : opacity;
    blendInto(out, mask, alpha, tint);
  });
  return out;
}

function blendInto(out: RgbaRaster, mask: GrayMask, opacity: number, tint: Tint): void {
  const { data } = out;
  const maskData = mask.data;
  for (let i = 0; i < maskData.length; i++) {
    if (maskData[i] === 0) continue;
    const o = i * 4;
    data[o] = Math.round(data[o] + (tint.r - data[o]) * opacity);
    data[o + 1] = Math.round(data[o + 1] + (tint.g - data[o + 1]) * opacity);
    data[o + 2] = Math.round(data[o + 2] + (tint.b - data[o + 2]) * opacity);
  }
}

function checkSameSize(image: RgbaRaster, mask: GrayMask): void {
  if (image.width !== mask.width || image.height !== mask.height) {
    throw new Error(
      `mask ${mask.width}x${mask.height} does not match image ${image.width}x${image.height}`,
    );
  }
  if (image.data.length !== image.width * image.height * 4) {
    throw new Error(`image buffer length ${image.data.length} is not width*height*4`);
  }
  if (mask.data.length !== mask.width * mask.height) {
    throw new Error(`mask buffer length ${mask.data.length} is not width*height`);
  }
}

function checkOpacity(opacity: number): void {
  if (!Number.isFinite(opacity) || opacity < 0 || opacity > 1) {
    throw new RangeError(`opacity must be in [0, 1], got ${opacity}`);
  }
}
