"""HTTP service exposing interactive sessions over the corpus.

Sessions live in an in-memory registry; each one wraps a SessionDriver, so a
demo session with a given seed replays exactly like a harness run with the
same seed. Mutating requests on one session are serialized by a per-session
lock, and feedback against a consumed display is rejected with 409 rather than
merged. Probabilities cross the wire as decimal strings with 12 significant
digits so cross-language clients can compare traces exactly.
"""

from __future__ import annotations

import logging
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, Header, HTTPException, Query
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse

from kisrf.corpus import Corpus, CorpusError
from kisrf.perception import PerceptionPredictor
from kisrf.policies import POLICIES, POLICY_OURS, POLICY_PICHUNTER, SessionDriver
from kisrf.session import Hyperparams, init_session, rank_of, ranking, snapshot_to_json
from kisrf.simulator import judge
from kisrf.synth import make_query

logger = logging.getLogger(__name__)

POLICY_HEADER = "X-KIS-Policy"
DEFAULT_TOP_K = 10


def format_prob(p: float) -> str:
    """Decimal string with 12 significant digits."""
    return format(p, ".12g")


@dataclass
class SessionEntry:
    """Registry slot: the driver plus serialization and bookkeeping."""

    session_id: str
    mode: str
    driver: SessionDriver
    created_at: float
    lock: threading.Lock = field(default_factory=threading.Lock)


class SessionRegistry:
    """Thread-safe in-memory session store."""

    def __init__(self) -> None:
        self._sessions: dict[str, SessionEntry] = {}
        self._lock = threading.Lock()

    def add(self, entry: SessionEntry) -> None:
        with self._lock:
            if entry.session_id in self._sessions:
                raise KeyError(entry.session_id)
            self._sessions[entry.session_id] = entry

    def get(self, session_id: str) -> SessionEntry:
        with self._lock:
            entry = self._sessions.get(session_id)
        if entry is None:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")
        return entry

    def __len__(self) -> int:
        with self._lock:
            return len(self._sessions)


def create_app(
    corpus: Corpus,
    predictors: list[PerceptionPredictor] | None = None,
    default_params: Hyperparams | None = None,
    log_dir: str | Path | None = None,
) -> FastAPI:
    """Build the service around one loaded corpus.

    Without predictors the default policy degrades to hard updates
    ("pichunter") and requesting "ours" is a client error.
    """
    app = FastAPI(title="kisrf", version="0.1.0")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    registry = SessionRegistry()
    default_policy = POLICY_OURS if predictors else POLICY_PICHUNTER
    if log_dir is None:
        log_dir = os.environ.get("KIS_LOG_DIR") or None
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)

    def item_doc(index: int) -> dict:
        item = corpus.manifest.items[index]
        return {
            "index": index,
            "item_id": item.item_id,
            "label": item.label,
            "thumbnail_uri": item.thumbnail_uri,
        }

    def top_doc(entry: SessionEntry, k: int) -> list[dict]:
        rows = []
        for rank, (index, prob) in enumerate(ranking(entry.driver.state, k), start=1):
            doc = item_doc(index)
            doc["rank"] = rank
            doc["prob"] = format_prob(prob)
            rows.append(doc)
        return rows

    def target_rank_doc(entry: SessionEntry) -> int | None:
        state = entry.driver.state
        if entry.mode != "demo" or state.target is None:
            return None
        return rank_of(state, state.target)

    def snapshot(entry: SessionEntry) -> None:
        if log_dir is None:
            return
        state = entry.driver.state
        path = log_dir / f"{entry.session_id}-step{state.step}.json"
        path.write_text(snapshot_to_json(state) + "\n")

    @app.post("/sessions", status_code=201)
    def create_session(
        payload: dict = Body(...),
        policy_header: str | None = Header(default=None, alias=POLICY_HEADER),
    ) -> dict:
        mode = payload.get("mode", "live")
        if mode not in ("demo", "live"):
            raise HTTPException(status_code=400, detail=f"unknown mode {mode!r}")
        try:
            params = Hyperparams.from_dict(
                {**Hyperparams().to_dict(), **payload.get("params", {})}
            )
        except (TypeError, ValueError) as exc:
            raise HTTPException(status_code=400, detail=f"bad params: {exc}") from exc
        seed = int(payload.get("seed", 0))
        policy = policy_header or default_policy
        if policy not in POLICIES:
            raise HTTPException(status_code=400, detail=f"unknown policy {policy!r}")
        if policy == POLICY_OURS and predictors is None:
            raise HTTPException(
                status_code=400, detail="no checkpoints loaded; policy 'ours' unavailable"
            )

        query = payload.get("query") or {}
        target: int | None = None
        if "target_id" in query:
            try:
                target = corpus.manifest.index_of(str(query["target_id"]))
            except KeyError:
                raise HTTPException(
                    status_code=404, detail=f"unknown target_id {query['target_id']!r}"
                )
        if mode == "demo" and target is None:
            raise HTTPException(status_code=400, detail="demo mode needs query.target_id")

        if "vectors" in query:
            try:
                vectors = [np.asarray(v, dtype=np.float64) for v in query["vectors"]]
            except (TypeError, ValueError) as exc:
                raise HTTPException(status_code=400, detail=f"bad vectors: {exc}") from exc
        elif target is not None:
            sigma = float(query.get("sigma", 0.0))
            vectors = make_query(corpus, target, sigma, np.random.default_rng(seed))
        else:
            raise HTTPException(
                status_code=400,
                detail="query needs vectors (live) or target_id [+ sigma] (demo)",
            )

        try:
            state = init_session(
                corpus, params, query_vectors=vectors, target=target
            )
        except (ValueError, CorpusError) as exc:
            raise HTTPException(status_code=400, detail=str(exc)) from exc
        driver = SessionDriver(
            corpus,
            state,
            policy=policy,
            predictors=predictors if policy == POLICY_OURS else None,
            query_vectors=vectors,
            seed=seed,
        )
        session_id = str(payload.get("session_id") or uuid.uuid4().hex)
        entry = SessionEntry(
            session_id=session_id, mode=mode, driver=driver, created_at=time.time()
        )
        try:
            registry.add(entry)
        except KeyError:
            raise HTTPException(
                status_code=409, detail=f"session {session_id!r} already exists"
            )
        snapshot(entry)
        return {
            "session_id": session_id,
            "mode": mode,
            "policy": policy,
            "step": 0,
            "params": params.to_dict(),
            "top": top_doc(entry, DEFAULT_TOP_K),
            "target_rank": target_rank_doc(entry),
        }

    @app.get("/sessions/{session_id}/display")
    def get_display(session_id: str, strategy: str = Query(default="greedy")) -> dict:
        entry = registry.get(session_id)
        with entry.lock:
            driver = entry.driver
            if driver.finished:
                raise HTTPException(
                    status_code=410,
                    detail={
                        "message": f"session finished after {driver.state.step} steps",
                        "ranking_url": f"/sessions/{session_id}/ranking",
                    },
                )
            try:
                display = driver.propose_display(strategy)
            except ValueError as exc:
                raise HTTPException(status_code=400, detail=str(exc)) from exc
            pairs = [
                {"a": a, "b": b, "a_item": item_doc(a), "b_item": item_doc(b)}
                for a, b in display.pairs
            ]
            if entry.mode == "demo" and driver.state.target is not None:
                # Oracle assist: suggested label per pair so demo clients can
                # replay the simulated-user loop click for click.
                for doc, pair in zip(pairs, display.pairs):
                    verdict = judge(corpus, pair, driver.state.target)
                    doc["oracle_label"] = verdict.majority
            return {
                "step": driver.state.step,
                "strategy": display.strategy,
                "pairs": pairs,
            }

    @app.post("/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, payload: dict = Body(...)) -> dict:
        entry = registry.get(session_id)
        labels = payload.get("labels")
        if not isinstance(labels, list) or not all(l in (0, 1) for l in labels):
            raise HTTPException(status_code=400, detail="labels must be a list of 0/1")
        with entry.lock:
            driver = entry.driver
            if driver.pending is None:
                raise HTTPException(
                    status_code=409, detail="no pending display; fetch one first"
                )
            if len(labels) != len(driver.pending.pairs):
                raise HTTPException(
                    status_code=400,
                    detail=f"expected {len(driver.pending.pairs)} labels, "
                    f"got {len(labels)}",
                )
            result = driver.submit([int(l) for l in labels])
            snapshot(entry)
            return {
                "step": result.step,
                "finished": driver.finished,
                "confidences": [
                    [format_prob(c) for c in row] for row in result.confidences
                ],
                "top": top_doc(entry, DEFAULT_TOP_K),
                "target_rank": target_rank_doc(entry),
            }

    @app.get("/sessions/{session_id}/ranking")
    def get_ranking(session_id: str, k: int = Query(default=DEFAULT_TOP_K, ge=1)) -> dict:
        entry = registry.get(session_id)
        with entry.lock:
            rows = top_doc(entry, k)
            return {
                "step": entry.driver.state.step,
                "ranking": rows,
                "prob_sum": format_prob(float(entry.driver.state.probs.sum())),
                "target_rank": target_rank_doc(entry),
            }

    @app.get("/items/{item_id}")
    def get_item(item_id: str) -> dict:
        try:
            return item_doc(corpus.manifest.index_of(item_id))
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id!r}")

    @app.get("/items/{item_id}/thumbnail")
    def get_thumbnail(item_id: str):
        try:
            item = corpus.manifest.items[corpus.manifest.index_of(item_id)]
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown item {item_id!r}")
        if not item.thumbnail_uri:
            raise HTTPException(status_code=404, detail="item has no thumbnail")
        path = Path(item.thumbnail_uri)
        if not path.is_file():
            raise HTTPException(status_code=404, detail="thumbnail file not found")
        return FileResponse(path)

    @app.get("/healthz")
    def healthz() -> dict:
        return {
            "status": "ok",
            "n_items": corpus.n_items,
            "spaces": [
                {"space_id": s.space_id, "dim": s.dim} for s in corpus.spaces
            ],
            "predictors_loaded": predictors is not None,
            "sessions": len(registry),
        }

    return app
