"""HTTP+JSON front for the study store.

Participants authenticate only by their unguessable participant id; the
export endpoint additionally requires the operator token configured at
startup. No response except the export ever pairs an item id with its
ground truth.
"""

import hmac

from fastapi import FastAPI, Header, Query
from fastapi.responses import JSONResponse, PlainTextResponse, Response
from pydantic import BaseModel

from .vtt import NotFoundError, StudyConfig, StudyStore, VttError
from .vtt import export_csv, export_jsonl


class CreateStudyBody(BaseModel):
    real_paths: list[str]
    fake_paths: list[str]
    n_real: int = 50
    n_fake: int = 30
    seed: int = 0


class EnrollBody(BaseModel):
    role: str


class ResponseBody(BaseModel):
    label: int


def build_app(store: StudyStore, export_token: str):
    if not export_token:
        raise VttError("an export token must be configured")
    app = FastAPI(title="visual study service", docs_url=None, redoc_url=None)

    @app.exception_handler(NotFoundError)
    async def _not_found(request, exc):
        return JSONResponse(status_code=404, content={"error": str(exc)})

    @app.exception_handler(VttError)
    async def _bad_request(request, exc):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.post("/studies", status_code=201)
    def create_study(body: CreateStudyBody):
        config = StudyConfig(n_real=body.n_real, n_fake=body.n_fake,
                             seed=body.seed)
        study = store.create_study(body.real_paths, body.fake_paths, config)
        return {"study_id": study.id, "n_items": len(study.items),
                "created": study.created}

    @app.post("/studies/{study_id}/participants", status_code=201)
    def enroll(study_id: str, body: EnrollBody):
        p = store.enroll(study_id, body.role)
        return {"participant_id": p.id, "role": p.role,
                "n_items": len(p.order)}

    @app.get("/studies/{study_id}/participants/{participant_id}/items")
    def items(study_id: str, participant_id: str):
        view = store.items_for(study_id, participant_id)
        return {"participant": view["participant"], "role": view["role"],
                "items": [{"item_id": i, "image_url": f"/images/{i}"}
                          for i in view["items"]],
                "current": view["current"]}

    @app.get("/images/{item_id}")
    def image(item_id: str):
        return Response(content=store.image_bytes(item_id),
                        media_type="image/png")

    @app.put("/studies/{study_id}/participants/{participant_id}"
             "/responses/{item_id}")
    def respond(study_id: str, participant_id: str, item_id: str,
                body: ResponseBody):
        stored = store.record_response(study_id, participant_id, item_id,
                                       body.label)
        return {"item_id": item_id, "label": stored["label"],
                "revisions": stored["revisions"]}

    @app.get("/studies/{study_id}/export")
    def export(study_id: str, token: str = Query(default=""),
               x_export_token: str = Header(default=""),
               format: str = Query(default="json")):
        supplied = token or x_export_token
        if not hmac.compare_digest(supplied, export_token):
            return JSONResponse(status_code=401,
                                content={"error": "export token required"})
        doc = store.export(study_id)
        if format == "jsonl":
            return PlainTextResponse(export_jsonl(doc))
        if format == "csv":
            return PlainTextResponse(export_csv(doc), media_type="text/csv")
        if format != "json":
            raise VttError(f"unknown export format {format!r}")
        return doc

    return app
