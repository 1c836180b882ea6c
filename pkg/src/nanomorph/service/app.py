"""HTTP facade over sessions, morphometry, classification and grid jobs.

State layout: uploaded images, mask snapshots, models and job results live
in a content-addressed store on disk and survive restarts; interactive
sessions (with their cached encoder embeddings) are in-memory only and
expire after a TTL.  Each session serializes its own mutations behind a
lock, so mask versions increase without gaps under concurrent clients.
"""

from __future__ import annotations

import email
import json
import tempfile
import threading
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.exceptions import HTTPException, RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from .. import __version__
from ..bundles import (
    KIND_FEATURES,
    KIND_SEGMENTER,
    Click,
    ModelBundle,
    find_bundles,
    synthetic_bundle,
)
from ..classifier.persist import load_model, save_model
from ..experiments import (
    ENCODER_SEGMENTER,
    ENCODER_SELFSUP,
    TrainConfig,
    classify_per_particle,
    enumerate_configs,
    load_manifest,
    results_to_csv,
    run_grid,
)
from ..imaging import load_grayscale, mask_from_png, mask_to_png
from ..morphometry import Calibration, calibrate, label_components, particles_to_csv, region_properties
from ..segmentation import EmptyHistoryError, add_click, postprocess_mask, start_session, undo_click
from .config import ServiceConfig
from .schemas import (
    BundleInfo,
    ClassifyItem,
    ClassifyRequest,
    ClassifyResponse,
    ClickRequest,
    GridJobRequest,
    ImageUploadResponse,
    JobResponse,
    MaskResponse,
    ModelInfo,
    ParticleOut,
    QuantifyRequest,
    QuantifyResponse,
    SessionCreateRequest,
    SessionCreateResponse,
)
from .store import ObjectStore, content_id

JOB_TERMINAL = ("done", "failed")

# default bundle names served even with an empty bundle directory
BUILTIN_SEGMENTER = "synthetic-segmenter"
BUILTIN_FEATURES = "synthetic-features"


def api_error(status: int, code: str, message: str, detail=None) -> HTTPException:
    return HTTPException(status_code=status,
                         detail={"code": code, "message": message, "detail": detail})


class SessionEntry:
    __slots__ = ("session", "lock", "last_access", "version", "mask_ids")

    def __init__(self, session) -> None:
        self.session = session
        self.lock = threading.Lock()
        self.last_access = time.monotonic()
        self.version = 0
        self.mask_ids: list[str] = []


class AppState:
    def __init__(self, cfg: ServiceConfig) -> None:
        self.cfg = cfg
        self.store = ObjectStore(cfg.data_dir)
        self.sessions: dict[str, SessionEntry] = {}
        self.sessions_lock = threading.Lock()
        self.jobs: dict[str, dict] = {}
        self.jobs_lock = threading.Lock()
        self.executor = ThreadPoolExecutor(max_workers=cfg.workers)
        self.models_lock = threading.Lock()
        self.model_cache: dict[str, tuple] = {}
        self.builtin_bundles = {
            BUILTIN_SEGMENTER: synthetic_bundle(
                BUILTIN_SEGMENTER, KIND_SEGMENTER, patch_size=16, grid_size=64
            ),
            BUILTIN_FEATURES: synthetic_bundle(
                BUILTIN_FEATURES, KIND_FEATURES, patch_size=14, grid_size=37, seed=7
            ),
        }

    def resolve_bundle(self, name: str) -> ModelBundle:
        if name in self.builtin_bundles:
            return self.builtin_bundles[name]
        if self.cfg.bundle_dir is not None:
            for b in find_bundles(self.cfg.bundle_dir):
                if b.name == name:
                    return b
        raise api_error(404, "unknown_bundle", f"no bundle named {name!r}")

    def all_bundles(self) -> list[ModelBundle]:
        out = list(self.builtin_bundles.values())
        if self.cfg.bundle_dir is not None:
            out.extend(find_bundles(self.cfg.bundle_dir))
        return out

    def purge_sessions(self) -> None:
        now = time.monotonic()
        with self.sessions_lock:
            dead = [sid for sid, e in self.sessions.items()
                    if now - e.last_access > self.cfg.session_ttl_seconds]
            for sid in dead:
                del self.sessions[sid]

    def get_session(self, session_id: str) -> SessionEntry:
        self.purge_sessions()
        with self.sessions_lock:
            entry = self.sessions.get(session_id)
        if entry is None:
            raise api_error(404, "unknown_session", f"no session {session_id!r}")
        entry.last_access = time.monotonic()
        return entry

    def load_model(self, model_id: str):
        with self.models_lock:
            if model_id in self.model_cache:
                return self.model_cache[model_id]
        blob = self.store.dir("models") / f"{model_id}.bin"
        if not blob.is_file():
            raise api_error(404, "model_missing", f"no model {model_id!r}")
        loaded = load_model(blob)
        with self.models_lock:
            self.model_cache[model_id] = loaded
        return loaded

    def update_job(self, job_id: str, **changes) -> None:
        with self.jobs_lock:
            rec = self.jobs.get(job_id)
            if rec is None or rec["state"] in JOB_TERMINAL:
                return
            if "progress" in changes:
                changes["progress"] = max(rec["progress"], float(changes["progress"]))
            rec.update(changes)
            self.store.put_record("jobs", job_id, rec)


def register_model(store: ObjectStore, model, standardizer, train_config=None,
                   trace=None, extra: dict | None = None) -> str:
    """Persist a trained head into the model registry; id is content-derived."""
    with tempfile.TemporaryDirectory() as tmp:
        tmp_blob = Path(tmp) / "model.bin"
        save_model(tmp_blob, model, standardizer=standardizer,
                   train_config=train_config, trace=trace, extra=extra)
        blob = tmp_blob.read_bytes()
        header = Path(str(tmp_blob) + ".json").read_bytes()
    # identity covers the header too: same weights with a different
    # standardizer or config are a different artifact
    model_id = content_id(blob + header)
    (store.dir("models") / f"{model_id}.bin").write_bytes(blob)
    (store.dir("models") / f"{model_id}.bin.json").write_bytes(header)
    return model_id


def _extract_upload(content_type: str, body: bytes) -> bytes:
    """Pull the file payload out of a multipart body, or pass raw bytes through.

    Multipart parsing rides on the stdlib MIME parser: the request body is
    prefixed with its Content-Type header and the first file-bearing part
    wins.  Non-multipart requests are treated as the image bytes themselves.
    """
    if not body:
        raise api_error(400, "empty_body", "no upload payload")
    if "multipart/" not in content_type.lower():
        return body
    head = f"Content-Type: {content_type}\r\nMIME-Version: 1.0\r\n\r\n"
    msg = email.message_from_bytes(head.encode("latin-1") + body)
    if msg.is_multipart():
        for part in msg.walk():
            if part.is_multipart():
                continue
            payload = part.get_payload(decode=True)
            if payload:
                return payload
    raise api_error(400, "bad_multipart", "no file part found in multipart body")


def _grid_job(state: AppState, job_id: str, req: GridJobRequest) -> None:
    state.update_job(job_id, state="running")
    try:
        manifest = load_manifest(req.manifest_path)
        names = {
            ENCODER_SEGMENTER: BUILTIN_SEGMENTER,
            ENCODER_SELFSUP: BUILTIN_FEATURES,
        }
        if req.bundles:
            names.update(req.bundles)
        bundles = {role: state.resolve_bundle(name) for role, name in names.items()}

        configs = enumerate_configs(req.seed)
        if req.configs:
            tokens = [t.strip() for t in req.configs.split(",") if t.strip()]
            configs = [c for c in configs if all(t in c.key for t in tokens)]
            if not configs:
                raise ValueError(f"config filter {req.configs!r} matches nothing")

        overrides = {k: v for k, v in (req.train.model_dump().items() if req.train else [])
                     if v is not None}
        train_cfg = TrainConfig(seed=req.seed, **overrides)

        table = run_grid(
            manifest, bundles, configs=configs, train_cfg=train_cfg, seed=req.seed,
            progress=lambda f: state.update_job(job_id, progress=f),
        )
        json_id = state.store.put(
            "exports", json.dumps(table.as_dict(), indent=2).encode()
        )
        csv_id = state.store.put("exports", results_to_csv(table).encode())
        state.update_job(
            job_id, progress=1.0, state="done",
            result_urls={"json": f"/v1/exports/{json_id}", "csv": f"/v1/exports/{csv_id}"},
        )
    except Exception as exc:
        state.update_job(job_id, state="failed", error=f"{type(exc).__name__}: {exc}")


def create_app(cfg: ServiceConfig | None = None) -> FastAPI:
    cfg = cfg or ServiceConfig()
    state = AppState(cfg)
    app = FastAPI(title="nanomorph", version=__version__)
    app.state.nanomorph = state

    app.add_middleware(
        CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"],
    )

    @app.exception_handler(HTTPException)
    async def _http_error(_request, exc: HTTPException):
        body = exc.detail
        if not (isinstance(body, dict) and "code" in body):
            body = {"code": "error", "message": str(exc.detail), "detail": None}
        return JSONResponse(status_code=exc.status_code, content=body)

    @app.exception_handler(RequestValidationError)
    async def _validation_error(_request, exc: RequestValidationError):
        detail = [
            {"loc": [str(x) for x in e.get("loc", [])], "msg": str(e.get("msg")),
             "type": str(e.get("type"))}
            for e in exc.errors()
        ]
        return JSONResponse(
            status_code=422,
            content={"code": "validation_error", "message": "invalid request body",
                     "detail": detail},
        )

    # -- images ---------------------------------------------------------------

    @app.post("/v1/images", response_model=ImageUploadResponse)
    async def upload_image(request: Request):
        body = await request.body()
        data = _extract_upload(request.headers.get("content-type", ""), body)
        try:
            image = load_grayscale(data)
        except Exception as exc:
            raise api_error(400, "decode_error", "cannot decode image", str(exc))
        image_id = state.store.put("images", data, meta={
            "width": int(image.shape[1]), "height": int(image.shape[0]),
            "content_type": request.headers.get("content-type", "application/octet-stream"),
        })
        return ImageUploadResponse(image_id=image_id, width=image.shape[1],
                                   height=image.shape[0])

    @app.get("/v1/images/{image_id}")
    def get_image(image_id: str):
        try:
            data = state.store.get("images", image_id)
        except KeyError:
            raise api_error(404, "unknown_image", f"no image {image_id!r}")
        media = state.store.get_meta("images", image_id).get("content_type")
        if not media or "multipart" in media:
            media = "application/octet-stream"
        return Response(content=data, media_type=media)

    # -- sessions -------------------------------------------------------------

    def _load_image(image_id: str) -> np.ndarray:
        try:
            return load_grayscale(state.store.get("images", image_id))
        except KeyError:
            raise api_error(404, "unknown_image", f"no image {image_id!r}")

    @app.post("/v1/sessions", response_model=SessionCreateResponse)
    def create_session(req: SessionCreateRequest):
        image = _load_image(req.image_id)
        bundle = state.resolve_bundle(req.bundle)
        if bundle.kind != KIND_SEGMENTER:
            raise api_error(422, "not_a_segmenter",
                            f"bundle {req.bundle!r} has no prompt decoder")
        session = start_session(image, bundle)
        sid = uuid.uuid4().hex[:16]
        with state.sessions_lock:
            state.sessions[sid] = SessionEntry(session)
        return SessionCreateResponse(session_id=sid, image_id=req.image_id,
                                     bundle=req.bundle, mask_version=0)

    def _store_mask(entry: SessionEntry) -> MaskResponse:
        png = mask_to_png(entry.session.current_mask)
        mask_id = state.store.put("masks", png)
        entry.version += 1
        entry.mask_ids.append(mask_id)
        return MaskResponse(
            mask_version=entry.version, mask_id=mask_id,
            mask_url=f"/v1/masks/{mask_id}",
            foreground_px=int(entry.session.current_mask.sum()),
        )

    @app.post("/v1/sessions/{session_id}/clicks", response_model=MaskResponse)
    def post_click(session_id: str, req: ClickRequest):
        entry = state.get_session(session_id)
        with entry.lock:
            try:
                add_click(entry.session, Click(x=req.x, y=req.y, polarity=req.polarity))
            except ValueError as exc:
                raise api_error(422, "click_out_of_bounds", str(exc))
            return _store_mask(entry)

    @app.post("/v1/sessions/{session_id}/undo", response_model=MaskResponse)
    def post_undo(session_id: str):
        entry = state.get_session(session_id)
        with entry.lock:
            try:
                undo_click(entry.session)
            except EmptyHistoryError:
                raise api_error(409, "history_empty", "nothing to undo")
            return _store_mask(entry)

    @app.get("/v1/sessions/{session_id}/mask")
    def get_session_mask(session_id: str):
        entry = state.get_session(session_id)
        with entry.lock:
            return Response(content=mask_to_png(entry.session.current_mask),
                            media_type="image/png")

    @app.get("/v1/masks/{mask_id}")
    def get_mask(mask_id: str):
        try:
            return Response(content=state.store.get("masks", mask_id),
                            media_type="image/png")
        except KeyError:
            raise api_error(404, "unknown_mask", f"no mask {mask_id!r}")

    # -- quantification -------------------------------------------------------

    @app.post("/v1/sessions/{session_id}/quantify", response_model=QuantifyResponse)
    def quantify(session_id: str, req: QuantifyRequest):
        entry = state.get_session(session_id)
        if (req.nm_per_pixel is None) == (req.bar is None):
            raise api_error(422, "invalid_calibration",
                            "provide exactly one of nm_per_pixel or bar")
        if req.bar is not None:
            calib = calibrate(req.bar.length_px, req.bar.label_nm)
        else:
            calib = Calibration(nm_per_pixel=req.nm_per_pixel, source="manual")

        with entry.lock:
            mask = entry.session.current_mask.copy()
        if not mask.any():
            raise api_error(422, "empty_mask", "session mask has no foreground")
        processed = postprocess_mask(mask, min_size=req.min_size,
                                     border_policy=req.border_policy,
                                     border_margin=req.border_margin)
        labels = label_components(processed)
        records = region_properties(labels, calib)
        if not records:
            raise api_error(422, "no_particles",
                            "post-processing removed every component")

        particles = []
        for rec in records:
            pm_png = mask_to_png(labels == rec.particle_id)
            mask_id = state.store.put("masks", pm_png)
            particles.append(ParticleOut(
                particle_id=rec.particle_id, area_px=rec.area_px,
                area_nm2=rec.area_nm2, equiv_diam_nm=rec.equivalent_diameter_nm,
                aspect_ratio=rec.aspect_ratio, feret_nm=rec.feret_nm,
                centroid_x=rec.centroid[0], centroid_y=rec.centroid[1],
                bbox=rec.bbox, class_label=rec.class_label,
                class_confidence=rec.class_confidence, mask_id=mask_id,
            ))
        csv_id = state.store.put("exports", particles_to_csv(records).encode())
        return QuantifyResponse(
            nm_per_pixel=calib.nm_per_pixel, calibration_source=calib.source,
            count=len(particles), particles=particles,
            csv_url=f"/v1/exports/{csv_id}",
        )

    @app.get("/v1/exports/{export_id}")
    def get_export(export_id: str):
        try:
            data = state.store.get("exports", export_id)
        except KeyError:
            raise api_error(404, "unknown_export", f"no export {export_id!r}")
        media = "text/csv" if data[:1] != b"{" else "application/json"
        return Response(content=data, media_type=media)

    # -- classification -------------------------------------------------------

    @app.post("/v1/classify", response_model=ClassifyResponse)
    def classify(req: ClassifyRequest):
        image = _load_image(req.image_id)
        model, standardizer, _header = state.load_model(req.model_id)
        if standardizer is None:
            raise api_error(422, "model_incomplete",
                            f"model {req.model_id!r} stores no standardizer")
        bundle = state.resolve_bundle(req.bundle)
        masks = []
        for mid in req.mask_ids:
            try:
                m = mask_from_png(state.store.get("masks", mid))
            except KeyError:
                raise api_error(404, "unknown_mask", f"no mask {mid!r}")
            if m.shape != image.shape:
                raise api_error(422, "mask_shape_mismatch",
                                f"mask {mid!r} is {m.shape}, image is {image.shape}")
            masks.append(m)
        try:
            labelled = classify_per_particle(image, masks, bundle, standardizer,
                                             model, pooling=req.pooling)
        except ValueError as exc:
            raise api_error(422, "classify_failed", str(exc))
        return ClassifyResponse(results=[
            ClassifyItem(mask_id=mid, label=lab, confidence=conf)
            for mid, (lab, conf) in zip(req.mask_ids, labelled)
        ])

    # -- jobs -----------------------------------------------------------------

    @app.post("/v1/jobs/grid", response_model=JobResponse)
    def submit_grid(req: GridJobRequest):
        job_id = uuid.uuid4().hex[:16]
        record = {"job_id": job_id, "kind": "grid", "state": "queued",
                  "progress": 0.0, "result_urls": None, "error": None}
        with state.jobs_lock:
            state.jobs[job_id] = record
            state.store.put_record("jobs", job_id, record)
        # snapshot before the worker can touch the shared record
        response = JobResponse(**record)
        state.executor.submit(_grid_job, state, job_id, req)
        return response

    @app.get("/v1/jobs/{job_id}", response_model=JobResponse)
    def get_job(job_id: str):
        with state.jobs_lock:
            record = state.jobs.get(job_id)
        if record is None:
            try:
                record = state.store.get_record("jobs", job_id)
            except KeyError:
                raise api_error(404, "unknown_job", f"no job {job_id!r}")
        return JobResponse(**record)

    # -- registries -----------------------------------------------------------

    @app.get("/v1/models", response_model=list[ModelInfo])
    def list_models():
        out = []
        for header_path in sorted(state.store.dir("models").glob("*.bin.json")):
            header = json.loads(header_path.read_text())
            out.append(ModelInfo(
                model_id=header_path.name[: -len(".bin.json")],
                architecture=header["architecture"],
                in_dim=header["in_dim"],
                class_names=header["class_names"],
            ))
        return out

    @app.get("/v1/bundles", response_model=list[BundleInfo])
    def list_bundles():
        return [
            BundleInfo(
                name=b.name, kind=b.kind, patch_size=b.patch_size,
                input_size=b.input_size, grid_size=b.grid_size,
                embed_dim=b.embed_dim, layer_count=b.layer_count,
                hypercolumn_layers=list(b.hypercolumn_layers),
                synthetic=b.is_synthetic, has_decoder=b.decoder_graph is not None,
            )
            for b in state.all_bundles()
        ]

    @app.get("/v1/healthz")
    def healthz():
        return {"service": "nanomorph", "version": __version__}

    if cfg.static_dir is not None and Path(cfg.static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=cfg.static_dir, html=True), name="ui")

    return app
