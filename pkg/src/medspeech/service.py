"""HTTP service over the decoding, LM-scoring and evaluation core.

Decoder bundles are created once (validating alphabet/LM compatibility at
construction) and are immutable afterwards, so concurrent decode calls are
safe. Language models are cached per (path, mtime).
"""

from __future__ import annotations

import uuid
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException
from pydantic import BaseModel, Field

from . import __version__, evaluate
from .corpus import Alphabet, read_alphabet
from .decode import LogitMatrix, beam_search
from .lm import NGramModel, read_arpa, sentence_logprob

app = FastAPI(title="medspeech", version=__version__)


@lru_cache(maxsize=16)
def _cached_lm(path: str, mtime_ns: int, token_mode: str) -> NGramModel:
    return read_arpa(path, token_mode)


def _load_lm(path: str, token_mode: str) -> NGramModel:
    p = Path(path)
    if not p.is_file():
        raise HTTPException(status_code=404, detail=f"no such ARPA file: {path}")
    try:
        return _cached_lm(str(p), p.stat().st_mtime_ns, token_mode)
    except Exception as e:
        raise HTTPException(status_code=422, detail=f"cannot load LM: {e}") from e


@dataclass(frozen=True)
class DecoderBundle:
    alphabet: Alphabet
    lm: NGramModel | None
    alpha: float
    beta: float
    beam_width: int


_decoders: dict[str, DecoderBundle] = {}


class CreateDecoderRequest(BaseModel):
    alphabet: list[str] | None = Field(
        default=None, description="explicit character list, blank excluded"
    )
    alphabet_path: str | None = Field(
        default=None, description="path to an alphabets.csv on the server"
    )
    lm_path: str | None = None
    lm_mode: str = Field(default="auto", pattern="^(auto|word|char)$")
    alpha: float = 0.75
    beta: float = 1.85
    beam_width: int = Field(default=128, ge=1)


class DecoderInfo(BaseModel):
    decoder_id: str
    alphabet_size: int
    lm_order: int | None
    alpha: float
    beta: float
    beam_width: int


class DecodeRequest(BaseModel):
    log_probs: list[list[float]] = Field(
        description="T x C natural-log probabilities; class C-1 is the blank"
    )


class HypothesisBody(BaseModel):
    text: str
    log_score: float
    acoustic_logp: float
    lm_logp: float
    length_bonus_count: int


class DecodeResponse(BaseModel):
    text: str
    log_score: float
    acoustic_logp: float
    lm_logp: float
    length_bonus_count: int
    hypotheses: list[HypothesisBody]


class LmScoreRequest(BaseModel):
    lm_path: str
    text: str
    lm_mode: str = Field(default="auto", pattern="^(auto|word|char)$")


class LmScoreResponse(BaseModel):
    log10_prob: float


class WerRequest(BaseModel):
    pairs: list[tuple[str, str]]


class WerResponse(BaseModel):
    wer: float
    cer: float


@app.get("/health")
def health():
    return {"status": "ok", "version": __version__}


@app.post("/decoders", response_model=DecoderInfo)
def create_decoder(req: CreateDecoderRequest):
    if (req.alphabet is None) == (req.alphabet_path is None):
        raise HTTPException(
            status_code=422, detail="give exactly one of alphabet, alphabet_path"
        )
    try:
        alphabet = (
            Alphabet(req.alphabet)
            if req.alphabet is not None
            else read_alphabet(req.alphabet_path)
        )
    except (ValueError, FileNotFoundError) as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    lm = _load_lm(req.lm_path, req.lm_mode) if req.lm_path else None
    bundle = DecoderBundle(alphabet, lm, req.alpha, req.beta, req.beam_width)
    if lm is not None:
        # surface alphabet/LM incompatibility at construction time
        try:
            probe = np.full((1, len(alphabet) + 1), -np.log(len(alphabet) + 1.0))
            beam_search(LogitMatrix(probe), alphabet, 1, lm, req.alpha, req.beta)
        except ValueError as e:
            raise HTTPException(status_code=422, detail=str(e)) from e
    decoder_id = uuid.uuid4().hex
    _decoders[decoder_id] = bundle
    return DecoderInfo(
        decoder_id=decoder_id,
        alphabet_size=len(alphabet),
        lm_order=lm.order if lm else None,
        alpha=bundle.alpha,
        beta=bundle.beta,
        beam_width=bundle.beam_width,
    )


def _get_decoder(decoder_id: str) -> DecoderBundle:
    bundle = _decoders.get(decoder_id)
    if bundle is None:
        raise HTTPException(status_code=404, detail=f"no such decoder: {decoder_id}")
    return bundle


@app.post("/decoders/{decoder_id}/decode", response_model=DecodeResponse)
def decode(decoder_id: str, req: DecodeRequest):
    bundle = _get_decoder(decoder_id)
    try:
        logits = LogitMatrix(np.asarray(req.log_probs, dtype=np.float64))
        hyps = beam_search(
            logits,
            bundle.alphabet,
            bundle.beam_width,
            bundle.lm,
            bundle.alpha,
            bundle.beta,
            top_n=10,
        )
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
    top = hyps[0]
    bodies = [HypothesisBody(**h.__dict__) for h in hyps]
    return DecodeResponse(
        text=top.text,
        log_score=top.log_score,
        acoustic_logp=top.acoustic_logp,
        lm_logp=top.lm_logp,
        length_bonus_count=top.length_bonus_count,
        hypotheses=bodies,
    )


@app.delete("/decoders/{decoder_id}")
def delete_decoder(decoder_id: str):
    _get_decoder(decoder_id)
    del _decoders[decoder_id]
    return {"deleted": decoder_id}


@app.post("/lm/score", response_model=LmScoreResponse)
def lm_score(req: LmScoreRequest):
    model = _load_lm(req.lm_path, req.lm_mode)
    return LmScoreResponse(log10_prob=sentence_logprob(model, req.text))


@app.post("/eval/wer", response_model=WerResponse)
def eval_wer(req: WerRequest):
    try:
        return WerResponse(wer=evaluate.wer(req.pairs), cer=evaluate.cer(req.pairs))
    except ValueError as e:
        raise HTTPException(status_code=422, detail=str(e)) from e
