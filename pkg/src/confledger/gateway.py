"""HTTP/JSON facade over the client flows, for dashboards and scripts.

The gateway holds no signing keys: write requests carry documents that were
signed by the actor on their own machine, and the gateway merely wraps them
in the submit flow (the chaincode re-verifies every signature).  Reads are
q-peer matched queries.  Restarting the gateway changes no observable result
— all state lives on the ledger.

Endpoints
    GET  /status                    chain height and tip hash
    GET  /registry                  membership registry
    GET  /crs?state=&device=        CR records (filterable)
    GET  /crs/{cr_id}               one CR record plus its validity evaluation
    POST /crs                       body: signed proposal document
    POST /crs/{cr_id}/approvals     body: signed approval document
    POST /crs/{cr_id}/acks          body: signed acknowledgement document
    GET  /blocks?start=&end=        block headers
    GET  /blocks/{number}           one full block document

Write responses are 202 with the transaction's validity flag and block
coordinates.  Response ETags are the SHA-256 of the canonical body bytes, so
pollers can send If-None-Match and get 304s.
"""

from __future__ import annotations

import hashlib
from typing import Callable, Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import canonical
from .identity import MembershipRegistry, verify_document
from .ledger import FLAG_VALID
from .network import (
    Client,
    NetworkError,
    QueryError,
    QueryMismatchError,
    SubmitOutcome,
    SubmitTimeoutError,
)

__all__ = ["create_app"]

READ_ACTOR = "gateway-reader"

# Chaincode/client error codes -> HTTP status.
_STATUS_BY_CODE = {
    "access_denied": 403,
    "ineligible": 403,
    "bad_signature": 403,
    "creator_mismatch": 403,
    "not_target": 403,
    "duplicate": 409,
    "wrong_state": 409,
    "invalid_version": 409,
    "orderer_rejected": 409,
    "not_found": 404,
    "invalid_argument": 400,
    "integrity": 400,
    "policy_error": 400,
    "unknown_test": 400,
    "no_policy": 400,
    "ambiguous_policy": 400,
    "unknown_chaincode": 400,
    "unknown_operation": 400,
    "endorsement_mismatch": 502,
    "endorsement_policy_unmet": 502,
    "unreachable": 504,
    "orderer_unavailable": 504,
}


def _error(status: int, code: str, detail: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"error": code, "detail": detail})


def _etagged(request: Request, doc: dict | list, status: int = 200) -> Response:
    body = canonical.encode(doc)
    etag = '"' + hashlib.sha256(body).hexdigest() + '"'
    if request.headers.get("if-none-match") == etag:
        return Response(status_code=304, headers={"ETag": etag})
    return Response(
        content=body,
        status_code=status,
        media_type="application/json",
        headers={"ETag": etag},
    )


def create_app(
    client_factory: Callable[[str], Client],
    registry: MembershipRegistry,
    static_dir: Optional[str] = None,
) -> FastAPI:
    """Build the gateway application.

    ``client_factory(actor_id)`` must yield a client whose submissions carry
    that actor as the envelope creator — the chaincode requires the creator
    to match the signer named inside each document.
    """
    app = FastAPI(title="confledger gateway", docs_url=None, redoc_url=None)

    def reader() -> Client:
        return client_factory(READ_ACTOR)

    # -- error translation ---------------------------------------------------

    @app.exception_handler(QueryError)
    async def _query_error(request: Request, exc: QueryError):
        return _error(_STATUS_BY_CODE.get(exc.code, 400), exc.code, str(exc))

    @app.exception_handler(QueryMismatchError)
    async def _query_mismatch(request: Request, exc: QueryMismatchError):
        return _error(502, "query_mismatch", str(exc))

    @app.exception_handler(SubmitTimeoutError)
    async def _submit_timeout(request: Request, exc: SubmitTimeoutError):
        return _error(504, "timeout", str(exc))

    @app.exception_handler(NetworkError)
    async def _network_error(request: Request, exc: NetworkError):
        return _error(502, "network", str(exc))

    # -- reads ----------------------------------------------------------------

    @app.get("/status")
    def get_status(request: Request):
        return _etagged(request, reader().height())

    @app.get("/registry")
    def get_registry(request: Request):
        return _etagged(request, registry.to_doc())

    @app.get("/crs")
    def list_crs(request: Request):
        allowed = {"state", "device"}
        unknown = set(request.query_params) - allowed
        if unknown:
            return _error(400, "invalid_argument", f"unknown query params {sorted(unknown)}")
        filter_doc = {}
        if request.query_params.get("state"):
            filter_doc["state"] = request.query_params["state"]
        if request.query_params.get("device"):
            filter_doc["device_id"] = request.query_params["device"]
        listing = reader().query_chaincode(
            "mgtcc", "retrieve", [canonical.encode(filter_doc).decode()]
        )
        return _etagged(request, listing)

    @app.get("/crs/{cr_id}")
    def get_cr(cr_id: str, request: Request):
        client = reader()
        listing = client.query_chaincode(
            "mgtcc", "retrieve", [canonical.encode({"cr_id": cr_id}).decode()]
        )
        if not listing["crs"]:
            return _error(404, "not_found", f"no CR {cr_id}")
        record = listing["crs"][0]
        evaluation = client.query_chaincode("pecc", "evaluate_vp", [cr_id])
        # The governing policy rides along so clients can recompute progress
        # and eligibility themselves instead of trusting the aggregate.
        vp = client.query_chaincode("pecc", "get_policy", ["vp", record["vp_id"]])
        return _etagged(
            request,
            {"cr": record, "evaluation": evaluation, "vp": vp["policy"]},
        )

    @app.get("/blocks")
    def list_blocks(request: Request, start: int = 0, end: int = -1):
        client = reader()
        height = client.height()["height"]
        if end < 0 or end > height:
            end = height
        start = max(start, 0)
        headers = []
        for number in range(start, end + 1):
            doc = client.get_block(number)
            headers.append(
                {
                    "number": doc["number"],
                    "block_hash": doc["block_hash"],
                    "prev_hash": doc["prev_hash"],
                    "timestamp": doc["timestamp"],
                    "tx_count": len(doc["transactions"]),
                }
            )
        return _etagged(request, {"height": height, "blocks": headers})

    @app.get("/blocks/{number}")
    def get_block(number: int, request: Request):
        return _etagged(request, reader().get_block(number))

    # -- writes ---------------------------------------------------------------

    async def _signed_body(request: Request, signer_field: str) -> dict | JSONResponse:
        try:
            doc = canonical.decode(await request.body())
        except canonical.CanonicalError as exc:
            return _error(400, "invalid_argument", f"body is not a canonical document: {exc}")
        if not isinstance(doc, dict):
            return _error(400, "invalid_argument", "body must be a JSON object")
        signer = doc.get(signer_field)
        if not isinstance(signer, str) or not signer:
            return _error(400, "invalid_argument", f"body needs a {signer_field}")
        if not verify_document(doc, registry, signer_field):
            return _error(403, "bad_signature", f"signature does not verify for {signer!r}")
        return doc

    def _submit(actor: str, operation: str, doc: dict) -> JSONResponse:
        outcome: SubmitOutcome = client_factory(actor).submit(
            "mgtcc", operation, [canonical.encode(doc).decode()]
        )
        if outcome.status == "aborted":
            status = _STATUS_BY_CODE.get(outcome.error_code, 400)
            return _error(status, outcome.error_code, outcome.reason)
        if outcome.validity_flag != FLAG_VALID:
            return _error(409, outcome.validity_flag, "transaction committed as invalid")
        body = canonical.decode(outcome.response)
        body.update(
            {
                "tx_id": outcome.tx_id,
                "validity_flag": outcome.validity_flag,
                "block_number": outcome.block_number,
                "tx_index": outcome.tx_index,
            }
        )
        return JSONResponse(status_code=202, content=body)

    @app.post("/crs")
    async def post_proposal(request: Request):
        doc = await _signed_body(request, "proposer_id")
        if isinstance(doc, JSONResponse):
            return doc
        return _submit(doc["proposer_id"], "propose", doc)

    @app.post("/crs/{cr_id}/approvals")
    async def post_approval(cr_id: str, request: Request):
        doc = await _signed_body(request, "approver_id")
        if isinstance(doc, JSONResponse):
            return doc
        if doc.get("cr_id") != cr_id:
            return _error(400, "invalid_argument", "body cr_id does not match the URL")
        return _submit(doc["approver_id"], "approve", doc)

    @app.post("/crs/{cr_id}/acks")
    async def post_ack(cr_id: str, request: Request):
        doc = await _signed_body(request, "device_id")
        if isinstance(doc, JSONResponse):
            return doc
        if doc.get("cr_id") != cr_id:
            return _error(400, "invalid_argument", "body cr_id does not match the URL")
        return _submit(doc["device_id"], "acknowledge", doc)

    if static_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/", StaticFiles(directory=static_dir, html=True), name="dashboard")

    return app
