"""Read-only HTTP facade for prediction and what-if optimization.

JSON over HTTP: GET /healthz, GET /studies, POST /predict, POST /optimize.
Images travel as base64 PNG; float maps as base64 little-endian float32
with explicit shape fields. The service never mutates models or cohort;
identical requests produce identical responses.

Status codes: 400 malformed study (the message names what is missing),
409 model-version mismatch, 422 user-supplied parameters outside [0,1],
503 models or cohort not loaded.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path
from typing import Optional

import numpy as np
import torch
from fastapi import Body, FastAPI
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from PIL import Image

from .optimizer import FrozenStack, OptimizerConfig, optimize_params
from .persist import f32_from_b64, f32_to_b64
from .study import (DEFAULT_RANGES, ParamMaps, Study, VIEW_ORDER, ViewId,
                    ViewSample, list_cohort, read_study, validate_study)


class ServiceError(Exception):
    def __init__(self, status: int, message: str):
        super().__init__(message)
        self.status = status


def _png_b64(arr: np.ndarray) -> str:
    """[3,H,W] or [1,H,W] float in [0,1] -> base64 PNG."""
    from .study import quantize_u8
    u8 = quantize_u8(arr)
    img = Image.fromarray(u8.transpose(1, 2, 0) if u8.shape[0] == 3 else u8[0])
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _png_from_b64(b64: str) -> np.ndarray:
    from .study import dequantize_u8
    img = Image.open(io.BytesIO(base64.b64decode(b64)))
    arr = np.asarray(img)
    arr = arr[None] if arr.ndim == 2 else arr.transpose(2, 0, 1)
    return dequantize_u8(arr)


def _study_from_payload(payload: dict) -> Study:
    views = payload.get("views")
    if not isinstance(views, dict):
        raise ServiceError(400, "study payload must contain a 'views' mapping")
    resolution = payload.get("resolution")
    ranges = {k: tuple(v) for k, v in payload.get("ranges", {}).items()} or dict(DEFAULT_RANGES)
    samples = {}
    for view in VIEW_ORDER:
        body = views.get(view.value)
        if body is None:
            raise ServiceError(400, f"missing view: {view.value}")
        try:
            if "pre_png_b64" in body:
                pre = _png_from_b64(body["pre_png_b64"])
            else:
                shape = tuple(body["pre_shape"])
                pre = f32_from_b64(body["pre_b64"], shape)
            if resolution is None:
                resolution = pre.shape[-1]
            params = f32_from_b64(body["params_b64"], (4, resolution, resolution))
        except ServiceError:
            raise
        except Exception as e:
            raise ServiceError(400, f"view {view.value}: {e}") from e
        samples[view] = ViewSample(view=view, pre=pre,
                                   params=ParamMaps(channels=params, ranges=ranges))
    study = Study(id=str(payload.get("id", "inline")), samples=samples)
    report = validate_study(study)
    if not report.ok():
        raise ServiceError(400, f"invalid study: {report.summary()}")
    return study


class PlannerState:
    def __init__(self, gen_dir=None, clf_dir=None, cohort_dir=None):
        self.cohort_dir = Path(cohort_dir) if cohort_dir else None
        self.stack: Optional[FrozenStack] = None
        self.load_error: Optional[str] = None
        if gen_dir and clf_dir:
            try:
                self.stack = FrozenStack.load(gen_dir, clf_dir)
            except Exception as e:
                self.load_error = str(e)

    def require_models(self) -> FrozenStack:
        if self.stack is None:
            raise ServiceError(503, self.load_error or "models not loaded")
        return self.stack

    def resolve_study(self, payload: dict) -> Study:
        if "study" in payload:
            return _study_from_payload(payload["study"])
        sid = payload.get("study_id")
        if not sid:
            raise ServiceError(400, "request needs 'study_id' or an inline 'study'")
        if self.cohort_dir is None or not (self.cohort_dir / sid / "study.json").exists():
            raise ServiceError(400, f"unknown study id: {sid}")
        return read_study(self.cohort_dir / sid)

    def check_version(self, payload: dict) -> None:
        expected = payload.get("expected_model_version")
        if not expected:
            return
        actual = self.stack.version if self.stack else {}
        for key, value in expected.items():
            if actual.get(key) != value:
                raise ServiceError(409, f"model version mismatch for {key}: "
                                        f"loaded {actual.get(key, 'none')[:12]}")


def _apply_param_override(study: Study, params: dict) -> Study:
    res = study.resolution
    samples = {}
    for view in VIEW_ORDER:
        sample = study.samples[view]
        body = params.get(view.value)
        if body is None:
            samples[view] = sample
            continue
        try:
            arr = f32_from_b64(body["b64"], (4, res, res))
        except Exception as e:
            raise ServiceError(400, f"params override for {view.value}: {e}") from e
        if not np.isfinite(arr).all() or arr.min() < 0.0 or arr.max() > 1.0:
            raise ServiceError(422, f"params override for {view.value} outside [0,1]")
        samples[view] = ViewSample(view=view, pre=sample.pre,
                                   params=ParamMaps(channels=arr, ranges=sample.params.ranges),
                                   post=sample.post, scar=sample.scar)
    return Study(id=study.id, samples=samples, label=study.label, meta=study.meta)


def create_app(gen_dir=None, clf_dir=None, cohort_dir=None, ui_dir=None) -> FastAPI:
    app = FastAPI(title="ablation planner service")
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"],
                       allow_headers=["*"])
    state = PlannerState(gen_dir, clf_dir, cohort_dir)
    app.state.planner = state

    @app.exception_handler(ServiceError)
    async def _service_error(_, exc: ServiceError):
        return JSONResponse(status_code=exc.status, content={"error": str(exc)})

    @app.get("/healthz")
    def healthz():
        return {
            "status": "ok",
            "models_loaded": state.stack is not None,
            "cohort_mounted": state.cohort_dir is not None,
            "model_version": state.stack.version if state.stack else None,
        }

    @app.get("/studies")
    def studies():
        if state.cohort_dir is None:
            raise ServiceError(503, "no cohort mounted")
        if not state.cohort_dir.exists():
            return {"studies": []}
        entries = []
        for sid in sorted(list_cohort(state.cohort_dir)):
            study = read_study(state.cohort_dir / sid)
            anterior = study.samples[ViewId.ANTERIOR]
            entries.append({
                "id": sid,
                "label": study.label,
                "has_targets": study.has_targets(),
                "resolution": study.resolution,
                "meta": {k: study.meta.get(k) for k in ("p", "gap_frac", "strategy")},
                "thumbnail_png_b64": _png_b64(anterior.pre),
            })
        return {"studies": entries}

    @app.get("/study/{sid}")
    def study_detail(sid: str):
        if state.cohort_dir is None:
            raise ServiceError(503, "no cohort mounted")
        if not (state.cohort_dir / sid / "study.json").exists():
            raise ServiceError(400, f"unknown study id: {sid}")
        study = read_study(state.cohort_dir / sid)
        res = study.resolution
        views = {}
        for view in VIEW_ORDER:
            sample = study.samples[view]
            views[view.value] = {
                "pre_png_b64": _png_b64(sample.pre),
                "params_b64": f32_to_b64(sample.params.channels),
                "params_shape": [4, res, res],
            }
        return {"id": sid, "resolution": res, "label": study.label,
                "meta": study.meta, "views": views}

    @app.post("/predict")
    def predict(payload: dict = Body(...)):
        stack = state.require_models()
        state.check_version(payload)
        study = state.resolve_study(payload)
        pre, params = stack.study_tensors(study)
        with torch.no_grad():
            logit = stack.logit(pre, params)
            risk = float(torch.sigmoid(logit))
            post_hat, mask_logits, _ = stack.gen(pre, params)
            scar = torch.sigmoid(mask_logits)
        views = {}
        for vi, view in enumerate(VIEW_ORDER):
            views[view.value] = {
                "post_png_b64": _png_b64(post_hat[vi].numpy()),
                "scar_b64": f32_to_b64(scar[vi].numpy()),
                "scar_shape": [1, study.resolution, study.resolution],
            }
        return {"risk": risk, "model_version": stack.version, "views": views}

    @app.post("/optimize")
    def optimize(payload: dict = Body(...)):
        stack = state.require_models()
        state.check_version(payload)
        study = state.resolve_study(payload)
        if "params" in payload:
            study = _apply_param_override(study, payload["params"])
        anchor = None
        if "anchor" in payload:
            anchored = _apply_param_override(study, payload["anchor"])
            anchor = np.stack([anchored.samples[v].params.channels for v in VIEW_ORDER])
        overrides = payload.get("config", {})
        try:
            cfg = OptimizerConfig.from_dict({**OptimizerConfig().to_dict(), **overrides})
            cfg.validate()
        except (TypeError, ValueError) as e:
            raise ServiceError(400, f"bad optimizer config: {e}") from e
        trace = optimize_params(study, cfg, stack, anchor_params=anchor)
        res = study.resolution
        final_params = {}
        last_params = {}
        diff = {}
        for vi, view in enumerate(VIEW_ORDER):
            final_params[view.value] = {"b64": f32_to_b64(trace.params_final[vi]),
                                        "shape": [4, res, res]}
            last_params[view.value] = {"b64": f32_to_b64(trace.params_last[vi]),
                                       "shape": [4, res, res]}
            diff[view.value] = {"b64": f32_to_b64(trace.diff[vi]), "shape": [4, res, res]}
        return {
            "risks": trace.risks,
            "running_best": trace.running_best,
            "best_step": trace.best_step,
            "best_risk": trace.best_risk,
            "no_improvement": trace.no_improvement,
            "final_params": final_params,
            "last_params": last_params,
            "diff_maps": diff,
            "model_version": stack.version,
        }

    if ui_dir:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    return app
