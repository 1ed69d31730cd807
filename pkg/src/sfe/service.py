"""HTTP facade: checkpoint store, job queue and render endpoints.

Persistence is file-based under a single data directory:

    data_dir/checkpoints/<id>.sfe     model or training checkpoints
    data_dir/pivots/<id>.sfe          cached pivot latents
    data_dir/jobs/<id>.json           job ledger records
    data_dir/jobs/<id>/               per-job artifacts

Long-running work (train, invert, edit, transfer) goes through a FIFO queue
served by a single worker thread, so at most one job mutates state at a time;
renders are read-only and may run concurrently. A job interrupted by a crash
is marked failed during startup recovery, never left "running".
"""

from __future__ import annotations

import base64
import dataclasses
import json
import queue
import threading
import time
import uuid
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import torch
from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from . import invedit
from .checkpoint import load_container, load_generator
from .config import TrainConfig, parse_config
from .core import PITCH_RANGE, YAW_RANGE, CameraPose, sample_latent
from .data import club_mask, load_dataset, synth_generate
from .errors import SfeError
from .rawio import labels_to_png_bytes, load_labels_png, load_rgb_png, rgb_to_png_bytes
from .render import render_frame
from .train import run_training

JOB_KINDS = ("train", "invert", "edit", "transfer")


@dataclass
class Job:
    id: str
    kind: str
    state: str = "queued"            # queued -> running -> done | failed
    progress: float = 0.0
    params: dict = field(default_factory=dict)
    artifacts: dict = field(default_factory=dict)
    error: str | None = None
    trace_tail: list = field(default_factory=list)
    created_at: float = field(default_factory=time.time)


class Storage:
    def __init__(self, data_dir: str | Path):
        self.root = Path(data_dir)
        self.checkpoints = self.root / "checkpoints"
        self.pivots = self.root / "pivots"
        self.jobs = self.root / "jobs"
        for d in (self.checkpoints, self.pivots, self.jobs):
            d.mkdir(parents=True, exist_ok=True)

    def checkpoint_path(self, checkpoint_id: str) -> Path:
        return self.checkpoints / f"{checkpoint_id}.sfe"

    def pivot_path(self, pivot_id: str) -> Path:
        return self.pivots / f"{pivot_id}.sfe"

    def job_record_path(self, job_id: str) -> Path:
        return self.jobs / f"{job_id}.json"

    def job_dir(self, job_id: str) -> Path:
        d = self.jobs / job_id
        d.mkdir(parents=True, exist_ok=True)
        return d

    def list_checkpoints(self) -> list[str]:
        return sorted(p.stem for p in self.checkpoints.glob("*.sfe"))


class JobManager:
    """Single-worker FIFO executor with a file-backed ledger."""

    def __init__(self, storage: Storage, runner):
        self.storage = storage
        self.runner = runner
        self.lock = threading.Lock()
        self.jobs: dict[str, Job] = {}
        self.queue: queue.Queue[str] = queue.Queue()
        self._recover()
        self.worker = threading.Thread(target=self._work, daemon=True)
        self.worker.start()

    def _recover(self) -> None:
        for path in self.storage.jobs.glob("*.json"):
            record = json.loads(path.read_text(encoding="utf-8"))
            job = Job(**record)
            if job.state in ("queued", "running"):
                job.state = "failed"
                job.error = "interrupted by service restart"
                self._persist(job)
            self.jobs[job.id] = job

    def _persist(self, job: Job) -> None:
        self.storage.job_record_path(job.id).write_text(
            json.dumps(asdict(job), indent=1), encoding="utf-8"
        )

    def active_for_checkpoint(self, checkpoint_id: str) -> Job | None:
        with self.lock:
            for job in self.jobs.values():
                if job.state in ("queued", "running") and (
                    job.params.get("checkpoint_id") == checkpoint_id
                ):
                    return job
        return None

    def submit(self, kind: str, params: dict) -> Job:
        job = Job(id=uuid.uuid4().hex[:12], kind=kind, params=params)
        with self.lock:
            self.jobs[job.id] = job
            self._persist(job)
        self.queue.put(job.id)
        return job

    def get(self, job_id: str) -> Job | None:
        with self.lock:
            return self.jobs.get(job_id)

    def update(self, job: Job, **changes) -> None:
        with self.lock:
            for key, value in changes.items():
                if key == "progress":
                    value = max(value, job.progress)  # polling sees monotone progress
                setattr(job, key, value)
            self._persist(job)

    def _work(self) -> None:
        while True:
            job_id = self.queue.get()
            job = self.get(job_id)
            if job is None or job.state != "queued":
                continue
            self.update(job, state="running")
            try:
                artifacts = self.runner(job)
                self.update(job, state="done", progress=1.0, artifacts=artifacts)
            except Exception as exc:  # ledger records the failure, queue lives on
                self.update(job, state="failed", error=f"{type(exc).__name__}: {exc}")


# --- request models ----------------------------------------------------------


class PoseBody(BaseModel):
    pitch: float = 0.0
    yaw: float = 0.0
    roll: float = 0.0


class RenderBody(BaseModel):
    checkpoint_id: str
    pose: PoseBody = PoseBody()
    width: int | None = None
    height: int | None = None
    z: list[float] | None = None
    z_i: list[list[float]] | None = None
    seed: int | None = None


class PivotBody(BaseModel):
    checkpoint_id: str
    sample_count: int = 10000
    seed: int = 0


class JobBody(BaseModel):
    kind: str
    params: dict = {}


class InvertBody(BaseModel):
    checkpoint_id: str
    target_image: str               # base64 PNG
    target_mask: str                # base64 paletted PNG (group labels)
    pose: PoseBody = PoseBody()
    pivot_id: str | None = None
    steps: int | None = None
    seed: int = 0
    lambdas: dict | None = None
    optimize_appearance: bool = True


class EditBody(BaseModel):
    checkpoint_id: str
    inversion_id: str
    edited_mask_png: str            # base64
    region_png: str | None = None
    steps: int | None = None


class TransferBody(BaseModel):
    checkpoint_id: str
    source_inversion_id: str
    target_inversion_id: str
    semantic: int
    mode: str = "geometry"          # geometry | appearance
    steps: int | None = None


def _decode_pose(body: PoseBody) -> CameraPose:
    values = (body.pitch, body.yaw, body.roll)
    if not all(np.isfinite(v) for v in values):
        raise HTTPException(422, detail="pose angles must be finite")
    if not PITCH_RANGE[0] <= body.pitch <= PITCH_RANGE[1]:
        raise HTTPException(422, detail=f"pitch {body.pitch} outside [-pi/2, pi/2]")
    if not YAW_RANGE[0] <= body.yaw <= YAW_RANGE[1]:
        raise HTTPException(422, detail=f"yaw {body.yaw} outside [-pi, pi]")
    return CameraPose(body.pitch, body.yaw, body.roll)


def _b64(data: bytes) -> str:
    return base64.b64encode(data).decode("ascii")


def _unb64(data: str) -> bytes:
    return base64.b64decode(data)


def create_app(data_dir: str | Path, ui_dir: str | Path | None = None) -> FastAPI:
    storage = Storage(data_dir)
    app = FastAPI(title="sfe service")
    gen_cache: dict[str, tuple[float, object, TrainConfig]] = {}
    cache_lock = threading.Lock()

    def load_gen(checkpoint_id: str):
        path = storage.checkpoint_path(checkpoint_id)
        if not path.is_file():
            raise HTTPException(404, detail=f"unknown checkpoint '{checkpoint_id}'")
        mtime = path.stat().st_mtime
        with cache_lock:
            hit = gen_cache.get(checkpoint_id)
            if hit and hit[0] == mtime:
                return hit[1], hit[2]
        gen, cfg, _ = load_generator(path)
        with cache_lock:
            gen_cache[checkpoint_id] = (mtime, gen, cfg)
        return gen, cfg

    def pivot_for(checkpoint_id: str, pivot_id: str | None, gen, sample_count=10000, seed=0):
        if pivot_id is not None:
            path = storage.pivot_path(pivot_id)
            if not path.is_file():
                raise HTTPException(404, detail=f"unknown pivot '{pivot_id}'")
            pivot, _ = invedit.load_pivot(path)
            return pivot, pivot_id
        pivot_id = f"{checkpoint_id}_s{seed}_n{sample_count}"
        path = storage.pivot_path(pivot_id)
        if path.is_file():
            pivot, _ = invedit.load_pivot(path)
            return pivot, pivot_id
        pivot = invedit.compute_pivot(gen, sample_count=sample_count, seed=seed)
        invedit.save_pivot(path, pivot, {"checkpoint_id": checkpoint_id, "seed": seed})
        return pivot, pivot_id

    def resolve_latents(body: RenderBody, cfg: TrainConfig):
        m = cfg.model
        if body.z is not None:
            z = torch.tensor(body.z, dtype=torch.float32)
            if z.shape != (m.latent_dim,):
                raise HTTPException(422, detail=f"z must have length {m.latent_dim}")
        else:
            if body.seed is None:
                raise HTTPException(422, detail="supply either z or seed")
            z = sample_latent(torch.Generator().manual_seed(body.seed), m.latent_dim)
        if body.z_i is not None:
            z_i = torch.tensor(body.z_i, dtype=torch.float32)
            if z_i.shape != (m.num_groups, m.latent_dim):
                raise HTTPException(
                    422, detail=f"z_i must be {m.num_groups} x {m.latent_dim}"
                )
        else:
            seed = body.seed if body.seed is not None else 0
            rng = torch.Generator().manual_seed(seed + 1)
            z_i = sample_latent(rng, m.latent_dim, count=m.num_groups)
        return z, z_i

    # --- job handlers --------------------------------------------------------

    def run_train_job(job: Job, progress) -> dict:
        params = job.params
        cfg = parse_config(params.get("config", {})) if params.get("config") else TrainConfig()
        if params.get("dataset_root"):
            dataset = load_dataset(params["dataset_root"])
        else:
            dataset = synth_generate(cfg)
        out_dir = storage.job_dir(job.id)
        final = run_training(cfg, dataset, out_dir, progress=progress)
        checkpoint_id = params.get("checkpoint_id") or f"train_{job.id}"
        target = storage.checkpoint_path(checkpoint_id)
        target.write_bytes(Path(final).read_bytes())
        return {"checkpoint_id": checkpoint_id, "metrics": str(out_dir / "metrics.ndjson")}

    def run_invert_job(job: Job, progress) -> dict:
        p = job.params
        gen, cfg = load_gen(p["checkpoint_id"])
        pivot, pivot_id = pivot_for(
            p["checkpoint_id"], p.get("pivot_id"), gen, seed=p.get("seed", 0)
        )
        image = load_rgb_png(_unb64(p["target_image"]))
        mask = load_labels_png(_unb64(p["target_mask"]))
        if mask.max() >= cfg.model.num_groups:
            mask = club_mask(mask, cfg.model.clubbing)
        pose = CameraPose(*p.get("pose", [0.0, 0.0, 0.0]))
        opts = cfg.training.inversion
        if p.get("lambdas"):
            opts = dataclasses.replace(opts, **p["lambdas"])
        offsets, trace = invedit.invert(
            gen,
            pivot,
            image,
            mask,
            pose,
            opts=opts,
            optimize_appearance=p.get("optimize_appearance", True),
            steps=p.get("steps"),
            callback=lambda i, n, rec: progress(i, n, rec),
        )
        out = storage.job_dir(job.id)
        invedit.save_offsets(
            out / "offsets.sfe",
            offsets,
            {"checkpoint_id": p["checkpoint_id"], "pivot_id": pivot_id,
             "pose": [pose.pitch, pose.yaw, pose.roll]},
        )
        (out / "trace.ndjson").write_text(
            "".join(json.dumps(r) + "\n" for r in trace), encoding="utf-8"
        )
        (out / "target_image.png").write_bytes(_unb64(p["target_image"]))
        (out / "target_mask.png").write_bytes(labels_to_png_bytes(mask))
        final = invedit.render_offset(gen, pivot, offsets, pose)
        rgb = final.rgb[0].detach().numpy()
        labels = final.labels[0].numpy()
        (out / "render.png").write_bytes(rgb_to_png_bytes(rgb))
        (out / "labels.png").write_bytes(labels_to_png_bytes(labels))
        return {
            "offset_file": str(out / "offsets.sfe"),
            "trace_file": str(out / "trace.ndjson"),
            "final_miou": trace[-1]["miou"] if trace else None,
            "pivot_id": pivot_id,
        }

    def load_inversion(inversion_id: str):
        job = manager.get(inversion_id)
        if job is None or job.kind != "invert" or job.state != "done":
            raise HTTPException(404, detail=f"no finished inversion '{inversion_id}'")
        out = storage.job_dir(inversion_id)
        offsets, meta = invedit.load_offsets(out / "offsets.sfe")
        image = load_rgb_png(out / "render.png")
        labels = load_labels_png(out / "labels.png")
        pose = CameraPose(*meta["pose"])
        return offsets, meta, image, labels, pose

    def run_edit_job(job: Job, progress) -> dict:
        p = job.params
        gen, cfg = load_gen(p["checkpoint_id"])
        offsets, meta, image, labels, pose = load_inversion(p["inversion_id"])
        pivot, _ = invedit.load_pivot(storage.pivot_path(meta["pivot_id"]))
        edited = load_labels_png(_unb64(p["edited_mask_png"]))
        region = None
        if p.get("region_png"):
            region = (load_labels_png(_unb64(p["region_png"])) > 0).astype(np.float32)
        out = storage.job_dir(job.id)
        before = invedit.render_offset(gen, pivot, offsets, pose)
        before_labels = before.labels[0].numpy()
        before_rgb = before.rgb[0].detach().numpy()

        if np.array_equal(edited, before_labels):
            diff = np.zeros_like(before_labels)
            (out / "before.png").write_bytes(rgb_to_png_bytes(before_rgb))
            (out / "after.png").write_bytes(rgb_to_png_bytes(before_rgb))
            (out / "diff.png").write_bytes(labels_to_png_bytes(diff))
            return {
                "before": str(out / "before.png"),
                "after": str(out / "after.png"),
                "diff": str(out / "diff.png"),
                "changed_pixels": 0,
                "zero_diff": True,
            }

        new_offsets, trace = invedit.edit(
            gen, pivot, offsets, image, before_labels, edited, pose,
            region=region, steps=p.get("steps"),
            callback=lambda i, n, rec: progress(i, n, rec),
        )
        after = invedit.render_offset(gen, pivot, new_offsets, pose)
        after_labels = after.labels[0].numpy()
        diff = (after_labels != before_labels).astype(np.int64)
        invedit.save_offsets(out / "offsets.sfe", new_offsets, dict(meta))
        (out / "before.png").write_bytes(rgb_to_png_bytes(before_rgb))
        (out / "after.png").write_bytes(rgb_to_png_bytes(after.rgb[0].detach().numpy()))
        (out / "diff.png").write_bytes(labels_to_png_bytes(diff))
        (out / "after_labels.png").write_bytes(labels_to_png_bytes(after_labels))
        return {
            "before": str(out / "before.png"),
            "after": str(out / "after.png"),
            "diff": str(out / "diff.png"),
            "offset_file": str(out / "offsets.sfe"),
            "changed_pixels": int(diff.sum()),
            "zero_diff": False,
            "final_miou": trace[-1]["miou"] if trace else None,
        }

    def run_transfer_job(job: Job, progress) -> dict:
        p = job.params
        gen, cfg = load_gen(p["checkpoint_id"])
        src_off, src_meta, src_img, src_labels, src_pose = load_inversion(
            p["source_inversion_id"]
        )
        tgt_off, _, tgt_img, tgt_labels, _ = load_inversion(p["target_inversion_id"])
        pivot, _ = invedit.load_pivot(storage.pivot_path(src_meta["pivot_id"]))
        group = int(p["semantic"])
        out = storage.job_dir(job.id)
        if p.get("mode", "geometry") == "appearance":
            new_offsets = invedit.swap_appearance(src_off, tgt_off, group)
            trace = []
            region = (tgt_labels == group).astype(np.int64)
        else:
            new_offsets, trace, region = invedit.transfer_geometry(
                gen, pivot, src_off, src_img, src_labels, tgt_img, tgt_labels,
                group, src_pose, steps=p.get("steps"),
                callback=lambda i, n, rec: progress(i, n, rec),
            )
            region = region.astype(np.int64)
        result = invedit.render_offset(gen, pivot, new_offsets, src_pose)
        invedit.save_offsets(out / "offsets.sfe", new_offsets, dict(src_meta))
        (out / "result.png").write_bytes(rgb_to_png_bytes(result.rgb[0].detach().numpy()))
        (out / "labels.png").write_bytes(labels_to_png_bytes(result.labels[0].numpy()))
        (out / "region.png").write_bytes(labels_to_png_bytes(region))
        return {
            "offset_file": str(out / "offsets.sfe"),
            "result": str(out / "result.png"),
            "region_empty": bool(region.sum() == 0),
            "final_miou": trace[-1]["miou"] if trace else None,
        }

    def run_job(job: Job) -> dict:
        def progress(step, total, record=None):
            changes = {"progress": min(step / max(total, 1), 1.0)}
            if record is not None:
                tail = (job.trace_tail + [record])[-5:]
                changes["trace_tail"] = tail
            manager.update(job, **changes)

        handlers = {
            "train": run_train_job,
            "invert": run_invert_job,
            "edit": run_edit_job,
            "transfer": run_transfer_job,
        }
        if job.kind not in handlers:
            raise SfeError(f"unknown job kind '{job.kind}'")
        return handlers[job.kind](job, progress)

    manager = JobManager(storage, run_job)

    def submit_checked(kind: str, params: dict) -> JSONResponse:
        checkpoint_id = params.get("checkpoint_id")
        if checkpoint_id:
            if not storage.checkpoint_path(checkpoint_id).is_file() and kind != "train":
                raise HTTPException(404, detail=f"unknown checkpoint '{checkpoint_id}'")
            holder = manager.active_for_checkpoint(checkpoint_id)
            if holder is not None:
                raise HTTPException(
                    409,
                    detail=f"checkpoint '{checkpoint_id}' is held by job {holder.id}",
                )
        job = manager.submit(kind, params)
        return JSONResponse({"job_id": job.id})

    # --- endpoints -----------------------------------------------------------

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.get("/checkpoints")
    def checkpoints():
        out = []
        for cid in storage.list_checkpoints():
            entry = {"id": cid}
            try:
                _, meta = load_container(storage.checkpoint_path(cid))
                entry["kind"] = meta.get("kind")
                entry["iteration"] = meta.get("iteration")
                entry["stage"] = meta.get("stage")
            except SfeError:
                entry["kind"] = "corrupt"
            out.append(entry)
        return out

    @app.post("/render")
    def render(body: RenderBody):
        gen, cfg = load_gen(body.checkpoint_id)
        pose = _decode_pose(body.pose)
        z, z_i = resolve_latents(body, cfg)
        width = body.width or cfg.render.width
        height = body.height or cfg.render.height
        if width < 1 or height < 1:
            raise HTTPException(422, detail="resolution must be positive")
        frame = render_frame(gen, z, z_i, pose, width, height)
        return {
            "rgb_png": _b64(rgb_to_png_bytes(frame.rgb)),
            "labels_png": _b64(labels_to_png_bytes(frame.labels)),
            "sem_meta": {
                "width": width,
                "height": height,
                "num_groups": cfg.model.num_groups,
                "group_names": list(range(cfg.model.num_groups)),
            },
            "z": z.tolist(),
            "z_i": z_i.tolist(),
            "seed": body.seed,
        }

    @app.post("/semantic")
    def semantic(body: RenderBody):
        gen, cfg = load_gen(body.checkpoint_id)
        pose = _decode_pose(body.pose)
        z, z_i = resolve_latents(body, cfg)
        width = body.width or cfg.render.width
        height = body.height or cfg.render.height
        frame = render_frame(gen, z, z_i, pose, width, height)
        probs = frame.sem_probs.astype("<f4")
        return {
            "labels_png": _b64(labels_to_png_bytes(frame.labels)),
            "sem_probs": _b64(probs.tobytes()),
            "sem_meta": {"dtype": "f4", "shape": list(probs.shape), "byteorder": "little"},
            "z": z.tolist(),
            "z_i": z_i.tolist(),
        }

    @app.post("/pivot")
    def pivot(body: PivotBody):
        gen, _ = load_gen(body.checkpoint_id)
        _, pivot_id = pivot_for(
            body.checkpoint_id, None, gen, sample_count=body.sample_count, seed=body.seed
        )
        return {"pivot_id": pivot_id}

    @app.post("/jobs")
    def submit_job(body: JobBody):
        if body.kind not in JOB_KINDS:
            raise HTTPException(422, detail=f"kind must be one of {JOB_KINDS}")
        return submit_checked(body.kind, body.params)

    @app.get("/jobs/{job_id}")
    def get_job(job_id: str):
        job = manager.get(job_id)
        if job is None:
            raise HTTPException(404, detail=f"unknown job '{job_id}'")
        return asdict(job)

    @app.get("/jobs/{job_id}/artifacts/{name}")
    def get_artifact(job_id: str, name: str):
        job = manager.get(job_id)
        if job is None:
            raise HTTPException(404, detail=f"unknown job '{job_id}'")
        path = storage.job_dir(job_id) / name
        if not path.is_file():
            raise HTTPException(404, detail=f"no artifact '{name}'")
        return FileResponse(path)

    @app.post("/invert")
    def invert_endpoint(body: InvertBody):
        params = body.model_dump()
        params["pose"] = [body.pose.pitch, body.pose.yaw, body.pose.roll]
        _decode_pose(body.pose)
        return submit_checked("invert", params)

    @app.post("/edit/preview")
    def edit_preview(body: EditBody):
        try:
            mask = load_labels_png(_unb64(body.edited_mask_png))
        except Exception as exc:
            raise HTTPException(422, detail=f"bad edited mask: {exc}") from exc
        gen, cfg = load_gen(body.checkpoint_id)
        if mask.max() >= cfg.model.num_groups:
            raise HTTPException(422, detail="edited mask labels exceed the group count")
        return submit_checked("edit", body.model_dump())

    @app.post("/transfer")
    def transfer_endpoint(body: TransferBody):
        gen, cfg = load_gen(body.checkpoint_id)
        if not 0 <= body.semantic < cfg.model.num_groups:
            raise HTTPException(422, detail=f"semantic must be < {cfg.model.num_groups}")
        if body.mode not in ("geometry", "appearance"):
            raise HTTPException(422, detail="mode must be geometry or appearance")
        return submit_checked("transfer", body.model_dump())

    if ui_dir is not None and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")
    else:

        @app.get("/")
        def index():
            return {"service": "sfe", "ui": "not bundled; see frontend/ in the repository"}

    return app
