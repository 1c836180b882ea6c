"""Request and response bodies for the /v1 HTTP API."""

from __future__ import annotations

from typing import Literal

from pydantic import BaseModel, Field


class ErrorBody(BaseModel):
    code: str
    message: str
    detail: object | None = None


class ImageUploadResponse(BaseModel):
    image_id: str
    width: int
    height: int


class SessionCreateRequest(BaseModel):
    image_id: str
    bundle: str


class SessionCreateResponse(BaseModel):
    session_id: str
    image_id: str
    bundle: str
    mask_version: int


class ClickRequest(BaseModel):
    x: int
    y: int
    polarity: Literal["positive", "negative"] = "positive"


class MaskResponse(BaseModel):
    mask_version: int
    mask_id: str
    mask_url: str
    foreground_px: int


class BarCalibration(BaseModel):
    length_px: float = Field(gt=0)
    label_nm: float = Field(gt=0)


class QuantifyRequest(BaseModel):
    nm_per_pixel: float | None = Field(default=None, gt=0)
    bar: BarCalibration | None = None
    min_size: int = Field(default=50, ge=0)
    border_policy: Literal["strip", "keep"] = "strip"
    border_margin: int = Field(default=2, ge=0)


class ParticleOut(BaseModel):
    particle_id: int
    area_px: int
    area_nm2: float
    equiv_diam_nm: float
    aspect_ratio: float
    feret_nm: float
    centroid_x: float
    centroid_y: float
    bbox: tuple[int, int, int, int]
    class_label: str | None = None
    class_confidence: float | None = None
    mask_id: str


class QuantifyResponse(BaseModel):
    nm_per_pixel: float
    calibration_source: str
    count: int
    particles: list[ParticleOut]
    csv_url: str


class ClassifyRequest(BaseModel):
    image_id: str
    mask_ids: list[str] = Field(min_length=1)
    bundle: str
    model_id: str
    pooling: Literal["avg", "max", "avg+max"] = "avg"


class ClassifyItem(BaseModel):
    mask_id: str
    label: str
    confidence: float


class ClassifyResponse(BaseModel):
    results: list[ClassifyItem]


class TrainOverrides(BaseModel):
    learning_rate: float | None = Field(default=None, gt=0)
    batch_size: int | None = Field(default=None, ge=1)
    max_epochs: int | None = Field(default=None, ge=0)
    patience: int | None = Field(default=None, ge=0)
    weight_decay: float | None = Field(default=None, ge=0)


class GridJobRequest(BaseModel):
    manifest_path: str
    bundles: dict[str, str] | None = None
    seed: int = 0
    configs: str | None = None
    train: TrainOverrides | None = None


class JobResponse(BaseModel):
    job_id: str
    kind: str
    state: Literal["queued", "running", "done", "failed"]
    progress: float
    result_urls: dict[str, str] | None = None
    error: str | None = None


class ModelInfo(BaseModel):
    model_id: str
    architecture: str
    in_dim: int
    class_names: list[str]


class BundleInfo(BaseModel):
    name: str
    kind: str
    patch_size: int
    input_size: int
    grid_size: int
    embed_dim: int
    layer_count: int
    hypercolumn_layers: list[int]
    synthetic: bool
    has_decoder: bool
