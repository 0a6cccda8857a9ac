"""HTTP service exposing the alignment pipeline.

Each endpoint wraps one pipeline command; paths in requests refer to the
server's filesystem.  Library errors map onto status codes by kind:
bad requests 400, bad data 422, numerical failures 500, always with an
``{"error": {"type", "message"}}`` body the CLI can translate into exit
codes.

Run it standalone with ``uvicorn chordalign.service:app``.
"""
from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field

from . import __version__, pipeline
from .errors import ChordAlignError, DataError, NumericError, UsageError

_STATUS_BY_TYPE = [(NumericError, 500, "numeric"), (DataError, 422, "data"), (UsageError, 400, "usage")]


class SynthRequest(BaseModel):
    out_dir: str
    n_tracks: int = 200
    seed: int = 0
    duration_min: float = 12.0
    duration_max: float = 20.0
    noise_level: float = 0.0
    qualities: list[str] | None = None


class SynthResponse(BaseModel):
    out_dir: str
    n_tracks: int
    total_duration: float
    manifest: str


class TrainRequest(BaseModel):
    data_dir: str
    out_path: str
    preset: str = "toy"
    model_overrides: list[str] = Field(default_factory=list)
    train_overrides: list[str] = Field(default_factory=list)
    cache_dir: str | None = None


class TrainResponse(BaseModel):
    checkpoint: str
    best_epoch: int
    stop_epoch: int
    best_val_loss: float
    n_train_windows: int
    n_val_windows: int
    split_sizes: dict[str, int]


class SegmentModel(BaseModel):
    onset: float
    duration: float
    end: float
    label: str
    label_id: int


class AlignRequest(BaseModel):
    audio_path: str
    chords_path: str
    checkpoint_path: str
    out_prefix: str | None = None
    blank_eps: float = 1e-3
    cache_dir: str | None = None


class AlignResponse(BaseModel):
    format_version: int
    audio: str
    chords: str
    checkpoint: str
    n_frames: int
    frame_period: float
    blank_eps: float
    path_log_prob: float
    segments: list[SegmentModel]
    lab_path: str | None = None
    json_path: str | None = None


class EvalRequest(BaseModel):
    pred_dir: str
    ref_dir: str
    window: float = 0.3
    out_path: str | None = None


class EvalResponse(BaseModel):
    window: float
    corpus: dict
    tracks: dict
    report_path: str | None = None


class BaselineRequest(BaseModel):
    method: str
    audio_path: str
    ref_path: str | None = None
    out_prefix: str | None = None
    window: float = 0.3


class BaselineResponse(BaseModel):
    method: str
    audio: str
    boundaries: list[float] | None = None
    boundary: dict | None = None
    reference: str | None = None
    segments: list[SegmentModel] | None = None
    lab_path: str | None = None
    json_path: str | None = None


class FeaturesRequest(BaseModel):
    audio_path: str
    out_path: str


class FeaturesResponse(BaseModel):
    audio: str
    out: str
    shape: list[int]
    frame_period: float


class HealthResponse(BaseModel):
    status: str
    version: str


def create_app() -> FastAPI:
    app = FastAPI(title="chordalign", version=__version__)

    @app.exception_handler(ChordAlignError)
    async def _chordalign_error(_: Request, exc: ChordAlignError) -> JSONResponse:
        for klass, status, kind in _STATUS_BY_TYPE:
            if isinstance(exc, klass):
                return JSONResponse(
                    status_code=status,
                    content={"error": {"type": kind, "message": str(exc)}},
                )
        return JSONResponse(
            status_code=400, content={"error": {"type": "usage", "message": str(exc)}}
        )

    @app.get("/health", response_model=HealthResponse)
    def health() -> HealthResponse:
        return HealthResponse(status="ok", version=__version__)

    @app.post("/synth", response_model=SynthResponse)
    def synth(req: SynthRequest) -> SynthResponse:
        summary = pipeline.run_synth(
            out_dir=req.out_dir,
            n_tracks=req.n_tracks,
            seed=req.seed,
            duration_range=(req.duration_min, req.duration_max),
            noise_level=req.noise_level,
            qualities=tuple(req.qualities) if req.qualities else None,
        )
        return SynthResponse(**summary)

    @app.post("/train", response_model=TrainResponse)
    def train(req: TrainRequest) -> TrainResponse:
        summary = pipeline.run_train(
            data_dir=req.data_dir,
            out_path=req.out_path,
            preset=req.preset,
            model_overrides=req.model_overrides,
            train_overrides=req.train_overrides,
            cache_dir=req.cache_dir,
        )
        return TrainResponse(**summary)

    @app.post("/align", response_model=AlignResponse)
    def align(req: AlignRequest) -> AlignResponse:
        record = pipeline.run_align(
            audio_path=req.audio_path,
            chords_path=req.chords_path,
            checkpoint_path=req.checkpoint_path,
            out_prefix=req.out_prefix,
            blank_eps=req.blank_eps,
            cache_dir=req.cache_dir,
        )
        return AlignResponse(**record)

    @app.post("/eval", response_model=EvalResponse)
    def evaluate(req: EvalRequest) -> EvalResponse:
        report = pipeline.run_eval(
            pred_dir=req.pred_dir,
            ref_dir=req.ref_dir,
            window=req.window,
            out_path=req.out_path,
        )
        return EvalResponse(**report)

    @app.post("/baseline", response_model=BaselineResponse)
    def baseline(req: BaselineRequest) -> BaselineResponse:
        result = pipeline.run_baseline(
            method=req.method,
            audio_path=req.audio_path,
            ref_path=req.ref_path,
            out_prefix=req.out_prefix,
            window=req.window,
        )
        return BaselineResponse(**result)

    @app.post("/features", response_model=FeaturesResponse)
    def features(req: FeaturesRequest) -> FeaturesResponse:
        return FeaturesResponse(**pipeline.run_features(req.audio_path, req.out_path))

    return app


app = create_app()
