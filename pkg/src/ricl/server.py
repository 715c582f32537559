"""HTTP API for live pairwise annotation; see ``docs/http_api.md``.

Annotators authenticate with bearer tokens mapped to annotator ids in a
JSON config file. The static UI bundle, when built, is served from the
configured directory; images are served by record id so the UI never sees
file paths.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Sequence

from fastapi import FastAPI, Header, HTTPException, Request
from fastapi.responses import FileResponse, HTMLResponse, JSONResponse, Response

from .annotation import AnnotationError, ConflictError, TaskStore, UnknownTaskError
from .corpus import ScenarioRecord

__all__ = ["create_app", "load_tokens"]


def load_tokens(path: str | Path) -> dict[str, str]:
    """Read a {token: annotator_id} map from a JSON file."""
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(payload, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in payload.items()
    ):
        raise ValueError("token file must map token strings to annotator ids")
    return payload


def create_app(
    store: TaskStore,
    tokens: dict[str, str],
    records: Sequence[ScenarioRecord] = (),
    static_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="pairwise annotation service")
    image_refs = {r.id: r.image_ref for r in records}
    static_root = Path(static_dir) if static_dir is not None else None

    def annotator_for(authorization: str | None) -> str:
        if not authorization or not authorization.startswith("Bearer "):
            raise HTTPException(status_code=401, detail="missing bearer token")
        token = authorization.removeprefix("Bearer ").strip()
        annotator = tokens.get(token)
        if annotator is None:
            raise HTTPException(status_code=401, detail="unknown token")
        return annotator

    @app.get("/api/health")
    def health():
        return {"status": "ok", "tasks_total": store.total, "tasks_done": store.done}

    @app.get("/api/tasks/next")
    def next_task(authorization: str | None = Header(default=None)):
        annotator = annotator_for(authorization)
        task = store.next_task(annotator)
        if task is None:
            return Response(status_code=204)
        return task.ui_payload(done=store.done, total=store.total)

    @app.post("/api/judgments")
    async def submit_judgment(request: Request, authorization: str | None = Header(default=None)):
        annotator = annotator_for(authorization)
        try:
            payload = await request.json()
        except Exception:
            raise HTTPException(status_code=400, detail="body must be JSON")
        task_id = payload.get("task_id")
        choice = payload.get("choice")
        if not isinstance(task_id, str) or choice not in ("a", "b"):
            raise HTTPException(status_code=400, detail="body must be {task_id, choice: 'a'|'b'}")
        try:
            store.submit_judgment(annotator, task_id, choice)
        except UnknownTaskError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        except ConflictError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except AnnotationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {
            "status": "recorded",
            "task_id": task_id,
            "progress": {"done": store.done, "total": store.total},
        }

    @app.get("/api/results")
    def results():
        return {"pairs": store.results_summary()}

    @app.get("/api/images/{record_id}")
    def image(record_id: str):
        ref = image_refs.get(record_id)
        if ref is None:
            raise HTTPException(status_code=404, detail="unknown record")
        if ref.startswith(("http://", "https://")):
            return JSONResponse(status_code=307, content=None, headers={"Location": ref})
        path = Path(ref)
        if not path.exists():
            raise HTTPException(status_code=404, detail="image file not found")
        return FileResponse(path)

    @app.get("/")
    def index():
        if static_root is not None and (static_root / "index.html").exists():
            return FileResponse(static_root / "index.html")
        return HTMLResponse(
            "<html><body><p>Annotation service is running. "
            "Build the UI bundle to serve it here.</p></body></html>"
        )

    @app.get("/static/{asset_path:path}")
    def static_asset(asset_path: str):
        if static_root is None:
            raise HTTPException(status_code=404, detail="no static directory configured")
        target = (static_root / asset_path).resolve()
        if not str(target).startswith(str(static_root.resolve())) or not target.is_file():
            raise HTTPException(status_code=404, detail="asset not found")
        return FileResponse(target)

    return app
