/**
 * Wire types for the /v1 workbench API.
 *
 * Field names deliberately mirror the JSON payloads byte for byte (snake_case
 * and all) so that requests and responses can be passed through without any
 * renaming layer between the browser and the service.
 */

export type Polarity = "positive" | "negative";

export interface ErrorBody {
  code: string;
  message: string;
  detail: unknown;
}

export interface ImageUploadResponse {
  image_id: string;
  width: number;
  height: number;
}

export interface SessionCreateResponse {
  session_id: string;
  image_id: string;
  bundle: string;
  mask_version: number;
}

export interface ClickBody {
  x: number;
  y: number;
  polarity: Polarity;
}

export interface MaskResponse {
  mask_version: number;
  mask_id: string;
  mask_url: string;
  foreground_px: number;
}

export interface BarCalibration {
  length_px: number;
  label_nm: number;
}

export interface QuantifyRequest {
  nm_per_pixel?: number;
  bar?: BarCalibration;
  min_size?: number;
  border_policy?: "strip" | "keep";
  border_margin?: number;
}

export interface ParticleRow {
  particle_id: number;
  area_px: number;
  area_nm2: number;
  equiv_diam_nm: number;
  aspect_ratio: number;
  feret_nm: number;
  centroid_x: number;
  centroid_y: number;
  bbox: [number, number, number, number];
  class_label: string | null;
  class_confidence: number | null;
  mask_id: string;
}

export interface QuantifyResponse {
  nm_per_pixel: number;
  calibration_source: string;
  count: number;
  particles: ParticleRow[];
  csv_url: string;
}

export interface ClassifyRequest {
  image_id: string;
  mask_ids: string[];
  bundle: string;
  model_id: string;
  pooling?: "avg" | "max" | "avg+max";
}

export interface ClassifyItem {
  mask_id: string;
  label: string;
  confidence: number;
}

export interface ClassifyResponse {
  results: ClassifyItem[];
}

export interface TrainOverrides {
  learning_rate?: number;
  batch_size?: number;
  max_epochs?: number;
  patience?: number;
  weight_decay?: number;
}

export interface GridJobRequest {
  manifest_path: string;
  bundles?: Record<string, string>;
  seed?: number;
  configs?: string;
  train?: TrainOverrides;
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobResponse {
  job_id: string;
  kind: string;
  state: JobState;
  progress: number;
  result_urls: Record<string, string> | null;
  error: string | null;
}

export interface ModelInfo {
  model_id: string;
  architecture: string;
  in_dim: number;
  class_names: string[];
}

export interface BundleInfo {
  name: string;
  kind: string;
  patch_size: number;
  input_size: number;
  grid_size: number;
  embed_dim: number;
  layer_count: number;
  hypercolumn_layers: number[];
  synthetic: boolean;
  has_decoder: boolean;
}

export interface HealthResponse {
  service: string;
  version: string;
}
