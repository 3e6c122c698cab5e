"""HTTP annotation service: instances, overlays, verdicts, masks, jobs.

State is event-sourced: every accepted write appends one AnnotationRecord to
a newline-delimited log, and replaying the log from empty reproduces the
in-memory store exactly. Reads run concurrently; writes serialize through a
single lock; at most one training job runs at a time on a worker thread.
Model activation swaps the parameter reference atomically under the state
lock, bumping a version that keys the attention cache, so no request ever
observes mixed parameters.
"""

from __future__ import annotations

import base64
import io
import json
import queue
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse
from PIL import Image

from .attention import (
    AttentionMap,
    BinaryMask,
    decode_mask_rle,
    encode_mask_rle,
    grad_cam_tensor,
    normalize_tensor,
    upsample,
)
from .errors import DataError, GradiaError, InputError
from .model import (
    ModelConfig,
    Parameters,
    forward_batch,
    init_model,
    load_parameters,
    save_parameters,
    softmax_probabilities,
)
from .reasonability import (
    ReasonabilityMatrix,
    Verdict,
    build_matrix,
    classify_instance,
    m1_accuracy,
    m2_ra_performance,
    m4_attention_accuracy,
)
from .synthetic import load_dataset
from .training import (
    OracleAnnotator,
    StoredHumanAnnotator,
    TrainConfig,
    build_validation_matrix,
    evaluate,
    finetune_gradia_with_curve,
)

_SPLITS = ("train", "validation", "test")
_QUADRANTS = ("RA", "UA", "RIA", "UIA")

DEFAULT_PAGE_SIZE = 50


@dataclass(frozen=True)
class AnnotationRecord:
    instance_id: str
    annotator_id: str
    verdict: Verdict | None
    mask_rle: list[int] | None
    likert: int | None
    created_at: float
    revision: int

    def to_json_line(self) -> str:
        payload = {
            "instance_id": self.instance_id,
            "annotator_id": self.annotator_id,
            "verdict": (
                None
                if self.verdict is None
                else {"q1": self.verdict.q1_sufficient, "q2": self.verdict.q2_contextual}
            ),
            "mask_rle": self.mask_rle,
            "likert": self.likert,
            "created_at": self.created_at,
            "revision": self.revision,
        }
        return json.dumps(payload, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json_line(cls, line: str) -> "AnnotationRecord":
        raw = json.loads(line)
        verdict = None
        if raw["verdict"] is not None:
            verdict = Verdict(
                q1_sufficient=bool(raw["verdict"]["q1"]),
                q2_contextual=bool(raw["verdict"]["q2"]),
                annotator_id=raw["annotator_id"],
                timestamp=float(raw["created_at"]),
            )
        return cls(
            instance_id=raw["instance_id"],
            annotator_id=raw["annotator_id"],
            verdict=verdict,
            mask_rle=raw["mask_rle"],
            likert=raw["likert"],
            created_at=float(raw["created_at"]),
            revision=int(raw["revision"]),
        )


class AnnotationStore:
    """Append-only log plus derived latest-revision views; one writer at a time."""

    def __init__(self, log_path: Path | None):
        self.log_path = log_path
        self._lock = threading.Lock()
        self.records: list[AnnotationRecord] = []
        self._revisions: dict[tuple[str, str], int] = {}
        self.latest_verdict: dict[str, Verdict] = {}
        self.latest_mask: dict[str, list[int]] = {}
        self.latest_likert: dict[str, int] = {}
        if log_path is not None and log_path.exists():
            with log_path.open("r", encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        self._apply(AnnotationRecord.from_json_line(line))

    def _apply(self, record: AnnotationRecord) -> None:
        key = (record.instance_id, record.annotator_id)
        prev = self._revisions.get(key, 0)
        if record.revision <= prev:
            raise DataError(
                f"revision {record.revision} for {key} does not advance past {prev}"
            )
        self._revisions[key] = record.revision
        self.records.append(record)
        if record.verdict is not None:
            self.latest_verdict[record.instance_id] = record.verdict
        if record.mask_rle is not None:
            self.latest_mask[record.instance_id] = list(record.mask_rle)
        if record.likert is not None:
            self.latest_likert[record.instance_id] = record.likert

    def append(
        self,
        instance_id: str,
        annotator_id: str,
        *,
        verdict: Verdict | None = None,
        mask_rle: list[int] | None = None,
        likert: int | None = None,
    ) -> AnnotationRecord:
        if verdict is None and mask_rle is None and likert is None:
            raise InputError("annotation record must carry a verdict, mask, or rating")
        with self._lock:
            revision = self._revisions.get((instance_id, annotator_id), 0) + 1
            record = AnnotationRecord(
                instance_id=instance_id,
                annotator_id=annotator_id,
                verdict=verdict,
                mask_rle=mask_rle,
                likert=likert,
                created_at=time.time(),
                revision=revision,
            )
            self._apply(record)
            if self.log_path is not None:
                with self.log_path.open("a", encoding="utf-8") as fh:
                    fh.write(record.to_json_line() + "\n")
                    fh.flush()
        return record

    def annotated_ids(self) -> set[str]:
        return {r.instance_id for r in self.records}

    def state_snapshot(self) -> bytes:
        """Canonical serialization of the derived state, for replay equality."""
        view = {
            "verdicts": {
                k: {"q1": v.q1_sufficient, "q2": v.q2_contextual}
                for k, v in sorted(self.latest_verdict.items())
            },
            "masks": {k: v for k, v in sorted(self.latest_mask.items())},
            "likert": {k: v for k, v in sorted(self.latest_likert.items())},
            "revisions": {f"{i}:{a}": r for (i, a), r in sorted(self._revisions.items())},
        }
        return json.dumps(view, sort_keys=True, separators=(",", ":")).encode()


@dataclass
class JobStatus:
    job_id: str
    kind: str
    state: str  # queued | running | done | failed
    progress: float = 0.0
    result_ref: str | None = None
    error_message: str | None = None
    config: dict = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "kind": self.kind,
            "state": self.state,
            "progress": self.progress,
            "result_ref": self.result_ref,
            "error_message": self.error_message,
        }


class Workbench:
    """Everything the HTTP layer needs: data, store, model state, job worker."""

    def __init__(
        self,
        instances,
        store: AnnotationStore,
        params: Parameters,
        *,
        run_root: Path | None = None,
    ):
        self.instances = sorted(instances, key=lambda i: i.id)
        self.by_id = {inst.id: inst for inst in self.instances}
        if len(self.by_id) != len(self.instances):
            raise DataError("dataset has duplicate instance ids")
        self.store = store
        self.run_root = run_root
        self._state_lock = threading.Lock()
        self._params = params
        self.model_version = 1
        self._attention_cache: dict[tuple[int, str], tuple[int, np.ndarray, np.ndarray]] = {}
        self.jobs: dict[str, JobStatus] = {}
        self._jobs_lock = threading.Lock()
        self._queue: queue.Queue = queue.Queue()
        self._worker: threading.Thread | None = None

    # -- model state ---------------------------------------------------------

    @property
    def params(self) -> Parameters:
        with self._state_lock:
            return self._params

    def activate(self, params: Parameters) -> int:
        with self._state_lock:
            self._params = params
            self.model_version += 1
            self._attention_cache.clear()
            return self.model_version

    def inference(self, instance) -> tuple[int, np.ndarray, np.ndarray]:
        """(prediction, probability vector, normalized attention grid), cached."""
        with self._state_lock:
            version, params = self.model_version, self._params
        key = (version, instance.id)
        cached = self._attention_cache.get(key)
        if cached is not None:
            return cached
        import torch

        trace = forward_batch(params, instance.image[None, :, :])
        probs = softmax_probabilities(trace.logits.detach().numpy()[0])
        pred = int(np.argmax(trace.logits.detach().numpy()[0]))
        cam = normalize_tensor(
            grad_cam_tensor(trace, torch.as_tensor([pred]))
        ).detach().numpy()[0]
        result = (pred, probs, cam)
        with self._state_lock:
            if self.model_version == version:
                self._attention_cache[key] = result
        return result

    # -- matrix ---------------------------------------------------------------

    def matrix_view(self) -> dict:
        records = []
        for inst in self.instances:
            verdict = self.store.latest_verdict.get(inst.id)
            if verdict is None:
                continue
            pred, _probs, _cam = self.inference(inst)
            records.append((inst.id, pred == inst.label, verdict))
        matrix = build_matrix(records)
        payload = {
            "counts": {
                "RA": matrix.ra,
                "UA": matrix.ua,
                "RIA": matrix.ria,
                "UIA": matrix.uia,
            },
            "ids": matrix.ids,
            "total": matrix.total,
            "annotated": matrix.total,
            "dataset_size": len(self.instances),
            "partial": matrix.total < len(self.instances),
            "metrics": None,
        }
        if matrix.total > 0:
            payload["metrics"] = {
                "m1_accuracy": m1_accuracy(matrix),
                "m2_ra_performance": m2_ra_performance(matrix),
                "m4_attention_accuracy": m4_attention_accuracy(matrix),
            }
        return payload

    def build_matrix_direct(self) -> ReasonabilityMatrix:
        """The same matrix computed straight from the store, for consistency checks."""
        records = []
        for inst in self.instances:
            verdict = self.store.latest_verdict.get(inst.id)
            if verdict is None:
                continue
            pred, _p, _c = self.inference(inst)
            records.append((inst.id, pred == inst.label, verdict))
        return build_matrix(records)

    # -- jobs ------------------------------------------------------------------

    def _ensure_worker(self) -> None:
        if self._worker is None or not self._worker.is_alive():
            self._worker = threading.Thread(target=self._work, daemon=True)
            self._worker.start()

    def _work(self) -> None:
        while True:
            job_id = self._queue.get()
            if job_id is None:
                return
            with self._jobs_lock:
                job = self.jobs[job_id]
                job.state = "running"
            try:
                result_ref = self._run_job(job)
                with self._jobs_lock:
                    job.state = "done"
                    job.progress = 1.0
                    job.result_ref = result_ref
            except Exception as exc:  # noqa: BLE001 - job isolation boundary
                with self._jobs_lock:
                    job.state = "failed"
                    job.error_message = f"{type(exc).__name__}: {exc}"

    def submit_job(self, kind: str, config: dict) -> JobStatus:
        if kind not in ("finetune", "evaluate"):
            raise InputError(f"unknown job kind {kind!r}")
        self._validate_job_config(kind, config)
        with self._jobs_lock:
            for job in self.jobs.values():
                if job.kind == kind and job.state in ("queued", "running"):
                    raise JobConflict(f"a {kind} job is already {job.state}")
            status = JobStatus(
                job_id=uuid.uuid4().hex[:12], kind=kind, state="queued", config=dict(config)
            )
            self.jobs[status.job_id] = status
        self._ensure_worker()
        self._queue.put(status.job_id)
        return status

    def get_job(self, job_id: str) -> JobStatus:
        with self._jobs_lock:
            job = self.jobs.get(job_id)
        if job is None:
            raise KeyError(job_id)
        return job

    def _validate_job_config(self, kind: str, config: dict) -> None:
        cfg = self._train_config(config)
        cfg.validate()

    def _train_config(self, config: dict) -> TrainConfig:
        from .objective import BalanceFactors

        known = {
            "condition",
            "epochs",
            "learning_rate",
            "batch_size",
            "seed",
            "higher_order",
            "divergence",
            "alpha",
            "beta",
            "gamma",
            "optimizer",
            "momentum",
        }
        unknown = set(config) - known
        if unknown:
            raise InputError(f"unknown job config fields: {sorted(unknown)}")
        factors = BalanceFactors(
            alpha=float(config.get("alpha", 0.2)),
            beta=float(config.get("beta", 0.5)),
            gamma=float(config.get("gamma", 0.8)),
        )
        return TrainConfig.finetune_defaults(
            condition=str(config.get("condition", "C4")),
            epochs=int(config.get("epochs", 10)),
            learning_rate=float(config.get("learning_rate", 0.01)),
            batch_size=int(config.get("batch_size", 32)),
            seed=int(config.get("seed", 0)),
            higher_order=bool(config.get("higher_order", True)),
            divergence=str(config.get("divergence", "absolute")),
            optimizer=str(config.get("optimizer", "momentum")),
            momentum=float(config.get("momentum", 0.9)),
            factors=factors,
        )

    def _job_dir(self, job: JobStatus) -> Path:
        root = self.run_root or Path.cwd() / "runs"
        path = Path(root) / f"{job.kind}-{job.job_id}"
        path.mkdir(parents=True, exist_ok=True)
        return path

    def _run_job(self, job: JobStatus) -> str:
        cfg = self._train_config(job.config)
        out = self._job_dir(job)
        if job.kind == "finetune":
            return self._run_finetune(job, cfg, out)
        return self._run_evaluate(job, cfg, out)

    def _run_finetune(self, job: JobStatus, cfg: TrainConfig, out: Path) -> str:
        verdicts = {
            i: v for i, v in self.store.latest_verdict.items() if i in self.by_id
        }
        if not verdicts:
            raise DataError("no verdicts stored; nothing to fine-tune from")
        masks = {}
        for iid, rle in self.store.latest_mask.items():
            inst = self.by_id.get(iid)
            if inst is None:
                continue
            masks[iid] = BinaryMask(grid=decode_mask_rle(rle), provenance="human")
        annotator = StoredHumanAnnotator(verdicts, masks)
        pool_instances = [self.by_id[i] for i in sorted(verdicts)]
        params = self.params
        _matrix, pools = build_validation_matrix(params, pool_instances, annotator)
        train_split = [i for i in self.instances if i.split == "train"]

        def on_epoch(done: int, total: int) -> None:
            with self._jobs_lock:
                job.progress = done / total

        tuned, curve = finetune_gradia_with_curve(
            params, train_split, pools, cfg, on_epoch=on_epoch
        )
        save_parameters(tuned, out / "params.bin")
        (out / "job.json").write_text(
            json.dumps({"kind": job.kind, "config": job.config}, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
        with (out / "loss_curves.csv").open("w", encoding="utf-8") as fh:
            fh.write("step,term,value\n")
            for step, term, value in curve:
                fh.write(f"{step},{term},{value!r}\n")
        return str(out)

    def _run_evaluate(self, job: JobStatus, cfg: TrainConfig, out: Path) -> str:
        test = [i for i in self.instances if i.split == "test"]
        if not test:
            raise DataError("dataset has no test split to evaluate")
        result = evaluate(self.params, test, OracleAnnotator())
        payload = {
            "matrix": {"counts": result.matrix.counts(), "total": result.matrix.total},
            "metrics": result.metrics.as_dict(),
            "auc": result.auc,
        }
        (out / "evaluation.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
        with self._jobs_lock:
            job.progress = 1.0
        return str(out)


class JobConflict(GradiaError):
    """Another job of the same kind is already queued or running."""


# --- HTTP layer ---------------------------------------------------------------


def _png_bytes(pixels: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels).save(buf, format="PNG")
    return buf.getvalue()


def _image_png_b64(image: np.ndarray) -> str:
    gray = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    return base64.b64encode(_png_bytes(gray)).decode("ascii")


def _overlay_png_b64(image: np.ndarray, attention_full: np.ndarray) -> str:
    """Red heatmap at 50% alpha over the grayscale image."""
    gray = np.clip(np.round(image * 255.0), 0, 255).astype(np.uint8)
    alpha = 0.5 * attention_full
    red = (1.0 - alpha) * gray + alpha * 255.0
    rgb = np.stack(
        [
            np.clip(np.round(red), 0, 255).astype(np.uint8),
            np.clip(np.round((1.0 - alpha) * gray), 0, 255).astype(np.uint8),
            np.clip(np.round((1.0 - alpha) * gray), 0, 255).astype(np.uint8),
        ],
        axis=-1,
    )
    return base64.b64encode(_png_bytes(rgb)).decode("ascii")


def _parse_yes_no(value, field_name: str) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.lower() in ("yes", "no"):
        return value.lower() == "yes"
    raise InputError(f"{field_name} must be 'yes' or 'no'")


def create_app(bench: Workbench, ui_dir=None) -> FastAPI:
    app = FastAPI(title="attention-alignment workbench", docs_url=None, redoc_url=None)

    def error(status: int, code: str, message: str) -> JSONResponse:
        return JSONResponse(status_code=status, content={"code": code, "message": message})

    @app.exception_handler(InputError)
    async def _input_error(_req: Request, exc: InputError):
        return error(400, "bad_request", str(exc))

    @app.exception_handler(DataError)
    async def _data_error(_req: Request, exc: DataError):
        return error(400, "data_error", str(exc))

    @app.exception_handler(JobConflict)
    async def _conflict(_req: Request, exc: JobConflict):
        return error(409, "conflict", str(exc))

    def get_instance_or_404(instance_id: str):
        inst = bench.by_id.get(instance_id)
        if inst is None:
            raise KeyError(instance_id)
        return inst

    @app.exception_handler(KeyError)
    async def _not_found(_req: Request, exc: KeyError):
        return error(404, "not_found", f"unknown id {exc.args[0]!r}")

    def summary(inst) -> dict:
        pred, probs, _cam = bench.inference(inst)
        verdict = bench.store.latest_verdict.get(inst.id)
        quadrant = (
            classify_instance(pred == inst.label, verdict) if verdict is not None else None
        )
        return {
            "id": inst.id,
            "split": inst.split,
            "label": inst.label,
            "prediction": pred,
            "correct": pred == inst.label,
            "quadrant": quadrant,
            "annotated": inst.id in bench.store.annotated_ids(),
            "has_mask": inst.id in bench.store.latest_mask,
            "likert": bench.store.latest_likert.get(inst.id),
        }

    @app.get("/api/instances")
    def list_instances(
        split: str | None = None,
        quadrant: str | None = None,
        annotated: str | None = None,
        page: int = 1,
        page_size: int = DEFAULT_PAGE_SIZE,
    ):
        if split is not None and split not in _SPLITS:
            raise InputError(f"unknown split {split!r}")
        if quadrant is not None and quadrant not in _QUADRANTS:
            raise InputError(f"unknown quadrant {quadrant!r}")
        if annotated is not None and annotated not in ("true", "false"):
            raise InputError("annotated filter must be 'true' or 'false'")
        if page < 1 or page_size < 1:
            raise InputError("page and page_size must be positive")
        rows = []
        for inst in bench.instances:
            if split is not None and inst.split != split:
                continue
            row = summary(inst)
            if quadrant is not None and row["quadrant"] != quadrant:
                continue
            if annotated is not None and row["annotated"] != (annotated == "true"):
                continue
            rows.append(row)
        total = len(rows)
        pages = max(1, -(-total // page_size))
        lo = (page - 1) * page_size
        return {
            "items": rows[lo : lo + page_size],
            "page": page,
            "page_size": page_size,
            "total": total,
            "pages": pages,
            "model_version": bench.model_version,
        }

    @app.get("/api/instances/{instance_id}")
    def get_instance(instance_id: str):
        inst = get_instance_or_404(instance_id)
        pred, probs, cam = bench.inference(inst)
        h, w = inst.image.shape
        attention = AttentionMap(
            grid=cam, normalized=True, class_index=pred, instance_id=inst.id
        )
        full = upsample(attention, h, w)
        verdict = bench.store.latest_verdict.get(inst.id)
        return {
            **summary(inst),
            "width": w,
            "height": h,
            "probabilities": [float(p) for p in probs],
            "image_png": _image_png_b64(inst.image),
            "overlay_png": _overlay_png_b64(inst.image, full),
            "attention_grid": [[float(x) for x in row] for row in cam],
            "annotations": {
                "verdict": (
                    None
                    if verdict is None
                    else {
                        "q1": "yes" if verdict.q1_sufficient else "no",
                        "q2": "yes" if verdict.q2_contextual else "no",
                    }
                ),
                "mask_rle": bench.store.latest_mask.get(inst.id),
                "likert": bench.store.latest_likert.get(inst.id),
            },
            "model_version": bench.model_version,
        }

    @app.post("/api/instances/{instance_id}/verdict")
    async def post_verdict(instance_id: str, request: Request):
        inst = get_instance_or_404(instance_id)
        body = await request.json()
        q1 = _parse_yes_no(body.get("q1"), "q1")
        q2 = _parse_yes_no(body.get("q2"), "q2")
        annotator = str(body.get("annotator_id", "anonymous"))
        verdict = Verdict(
            q1_sufficient=q1, q2_contextual=q2, annotator_id=annotator, timestamp=time.time()
        )
        record = bench.store.append(inst.id, annotator, verdict=verdict)
        pred, _probs, _cam = bench.inference(inst)
        return {
            "revision": record.revision,
            "quadrant": classify_instance(pred == inst.label, verdict),
        }

    @app.post("/api/instances/{instance_id}/mask")
    async def post_mask(instance_id: str, request: Request):
        inst = get_instance_or_404(instance_id)
        body = await request.json()
        rle = body.get("mask_rle")
        if not isinstance(rle, list):
            raise InputError("mask_rle must be a list of integers")
        grid = decode_mask_rle(rle)
        if grid.shape != inst.image.shape:
            raise InputError(
                f"mask dims {grid.shape[::-1]} do not match image "
                f"{inst.image.shape[::-1]}"
            )
        annotator = str(body.get("annotator_id", "anonymous"))
        record = bench.store.append(inst.id, annotator, mask_rle=[int(x) for x in rle])
        return {"revision": record.revision}

    @app.post("/api/instances/{instance_id}/likert")
    async def post_likert(instance_id: str, request: Request):
        inst = get_instance_or_404(instance_id)
        body = await request.json()
        rating = body.get("rating")
        if not isinstance(rating, int) or isinstance(rating, bool) or not 1 <= rating <= 5:
            raise InputError("rating must be an integer in 1..5")
        annotator = str(body.get("annotator_id", "anonymous"))
        record = bench.store.append(inst.id, annotator, likert=rating)
        return {"revision": record.revision}

    @app.get("/api/matrix")
    def get_matrix():
        return bench.matrix_view()

    @app.post("/api/jobs")
    async def submit_job(request: Request):
        body = await request.json()
        kind = body.get("kind")
        if not isinstance(kind, str):
            raise InputError("job kind is required")
        config = body.get("config", {})
        if not isinstance(config, dict):
            raise InputError("job config must be an object")
        status = bench.submit_job(kind, config)
        return status.as_dict()

    @app.get("/api/jobs/{job_id}")
    def get_job(job_id: str):
        return bench.get_job(job_id).as_dict()

    @app.post("/api/model/activate")
    async def activate(request: Request):
        body = await request.json()
        job_id = body.get("job_id")
        params_path = body.get("params_path")
        if (job_id is None) == (params_path is None):
            raise InputError("pass exactly one of job_id or params_path")
        if job_id is not None:
            job = bench.get_job(str(job_id))
            if job.state != "done" or job.result_ref is None:
                raise InputError(f"job {job.job_id} is {job.state}, not done")
            params_path = str(Path(job.result_ref) / "params.bin")
        path = Path(params_path)
        if not path.exists():
            raise InputError(f"no parameter archive at {path}")
        params = load_parameters(path, bench.params.config)
        version = bench.activate(params)
        return {"model_version": version}

    if ui_dir is not None:
        from starlette.staticfiles import StaticFiles

        # Mounted last so /api routes keep precedence; html=True serves
        # index.html for bare "/" requests.
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app


def build_workbench(
    data_dir,
    *,
    params_path=None,
    model_config: ModelConfig | None = None,
    run_root=None,
) -> Workbench:
    """Assemble service state from a dataset directory produced by save_dataset."""
    root = Path(data_dir)
    instances = load_dataset(root)
    mc = model_config or ModelConfig()
    if params_path is not None:
        params = load_parameters(params_path, mc)
    else:
        params = init_model(mc, seed=0)
    store = AnnotationStore(root / "annotations.jsonl")
    return Workbench(
        instances,
        store,
        params,
        run_root=Path(run_root) if run_root is not None else root / "runs",
    )
