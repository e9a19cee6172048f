"""HTTP surface for the serving gateway."""

from __future__ import annotations

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from .errors import BackendError, UnknownAccount
from .gateway import AnswerRequest, Gateway


class AnswerBody(BaseModel):
    account_id: str
    question: str = Field(min_length=1)
    top_n: int | None = None
    trace: bool = False


def create_app(gateway: Gateway) -> FastAPI:
    app = FastAPI(title="styleqa-gateway")

    @app.get("/v1/healthz")
    def healthz():
        return {"status": "ok"}

    @app.get("/v1/resolve/{account_id}")
    def resolve(account_id: str):
        try:
            cluster, record = gateway.resolve(account_id)
        except UnknownAccount as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        return {
            "cluster": cluster.key,
            "adapter": record.to_record() if record else None,
        }

    @app.post("/v1/answer")
    def answer(body: AnswerBody):
        try:
            resp = gateway.answer(
                AnswerRequest(
                    account_id=body.account_id,
                    question=body.question,
                    top_n=body.top_n,
                    trace=body.trace,
                )
            )
        except UnknownAccount as exc:
            raise HTTPException(status_code=404, detail=str(exc)) from exc
        except BackendError as exc:
            raise HTTPException(
                status_code=503, detail=str(exc), headers={"retry-after": "1"}
            ) from exc
        return resp.to_record()

    return app
