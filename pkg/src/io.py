"""
I/O and validation helpers: waveforms, corpora, wordpiece vocabularies,
checkpoints and experiment configs.

Design goals:
- Keep functions small and testable.
- Fail fast on schema issues.
- Plain formats: raw float arrays with JSON sidecars, JSON-lines manifests.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional

import numpy as np
import pandas as pd

from .audio import Waveform
from .text import WordpieceModel
from .toyworld import Corpus, SpeakerEmbedding, TextPair, Utterance

logger = logging.getLogger(__name__)

REQUIRED_SPEECH_COLS = ["uid", "transcript", "speaker", "provenance", "domain", "audio"]
REQUIRED_TEXT_COLS = ["uid", "source", "target", "domain", "label_provenance"]
REQUIRED_CORPUS_KEYS = ["name", "task", "seed"]

CHECKPOINT_VERSION = 1


class SchemaError(ValueError):
    """Raised when a file on disk does not meet minimum schema requirements."""


class CheckpointError(ValueError):
    """Raised for corrupt checkpoints or fingerprint mismatches."""


def ensure_dir(p: Path) -> None:
    p.mkdir(parents=True, exist_ok=True)


def validate_schema(record: Mapping[str, Any], required: Iterable[str], name: str) -> None:
    """Ensure a record (or a DataFrame's columns) contains the required keys."""
    keys = record.columns if isinstance(record, pd.DataFrame) else record.keys()
    missing = [c for c in required if c not in keys]
    if missing:
        raise SchemaError(f"{name} is missing required fields: {missing}")


def load_json(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise FileNotFoundError(f"Missing file: {path}")
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise SchemaError(f"{path} is not valid JSON: {exc}") from exc


def write_json(path: Path, payload: Mapping[str, Any]) -> Path:
    ensure_dir(path.parent)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


# ---------------------------------------------------------------------------
# Waveforms
# ---------------------------------------------------------------------------

def save_waveform(stem: Path, w: Waveform) -> Path:
    """Writes <stem>.f32 (little-endian float32) and <stem>.json {sample_rate, length}."""
    ensure_dir(stem.parent)
    raw = stem.with_suffix(".f32")
    w.samples.astype("<f4").tofile(raw)
    write_json(stem.with_suffix(".json"), {"sample_rate": int(w.sample_rate), "length": len(w)})
    return raw


def load_waveform(stem: Path) -> Waveform:
    meta = load_json(stem.with_suffix(".json"))
    validate_schema(meta, ["sample_rate", "length"], f"{stem}.json")
    raw = stem.with_suffix(".f32")
    if not raw.exists():
        raise FileNotFoundError(f"Missing file: {raw}")
    samples = np.fromfile(raw, dtype="<f4").astype(np.float64)
    if samples.size != int(meta["length"]):
        raise SchemaError(f"{raw} holds {samples.size} samples, sidecar says {meta['length']}")
    return Waveform(samples, int(meta["sample_rate"]))


# ---------------------------------------------------------------------------
# Corpora
# ---------------------------------------------------------------------------

def _utterance_record(utt: Utterance, audio: str) -> Dict[str, Any]:
    return {
        "uid": utt.uid,
        "transcript": utt.transcript,
        "translation": utt.translation,
        "speaker": list(utt.speaker.as_tuple()),
        "provenance": utt.provenance,
        "label_provenance": utt.label_provenance,
        "domain": utt.domain,
        "audio": audio,
    }


def save_corpus(corpus: Corpus, out_dir: Path) -> Path:
    """
    Writes:
      out_dir/corpus.json      (name, task, seed)
      out_dir/manifest.jsonl   (one record per example)
      out_dir/audio/<uid>.f32  (+ .json sidecar) for speech corpora
    """
    ensure_dir(out_dir)
    if corpus.task == "MT":
        records = [
            {"uid": ex.uid, "source": ex.source, "target": ex.target,
             "domain": ex.domain, "label_provenance": ex.label_provenance}
            for ex in corpus.examples
        ]
    else:
        records = []
        for i, utt in enumerate(corpus.examples):
            stem = utt.uid or f"utt-{i:06d}"
            save_waveform(out_dir / "audio" / stem, utt.waveform)
            records.append(_utterance_record(utt, f"audio/{stem}"))
    manifest = out_dir / "manifest.jsonl"
    pd.DataFrame.from_records(records).to_json(manifest, orient="records", lines=True, force_ascii=False)
    write_json(out_dir / "corpus.json", {"name": corpus.name, "task": corpus.task, "seed": corpus.seed,
                                         "size": len(corpus)})
    return manifest


def _none_if_missing(value):
    if value is None:
        return None
    if isinstance(value, float) and np.isnan(value):
        return None
    return value


def load_corpus(corpus_dir: Path) -> Corpus:
    meta = load_json(corpus_dir / "corpus.json")
    validate_schema(meta, REQUIRED_CORPUS_KEYS, f"{corpus_dir}/corpus.json")
    manifest = corpus_dir / "manifest.jsonl"
    if not manifest.exists():
        raise FileNotFoundError(f"Missing file: {manifest}")
    df = pd.read_json(manifest, orient="records", lines=True, dtype=False)
    examples: List[Any] = []
    if meta["task"] == "MT":
        if len(df):
            validate_schema(df, REQUIRED_TEXT_COLS, str(manifest))
        for r in df.to_dict(orient="records"):
            examples.append(TextPair(str(r["source"]), str(r["target"]), r["domain"], r["label_provenance"], r["uid"]))
    else:
        if len(df):
            validate_schema(df, REQUIRED_SPEECH_COLS, str(manifest))
        for r in df.to_dict(orient="records"):
            examples.append(Utterance(
                waveform=load_waveform(corpus_dir / r["audio"]),
                transcript=str(r["transcript"]),
                speaker=SpeakerEmbedding(*[float(x) for x in r["speaker"]]),
                provenance=r["provenance"],
                domain=r["domain"],
                translation=_none_if_missing(r.get("translation")),
                label_provenance=_none_if_missing(r.get("label_provenance")),
                uid=r["uid"],
            ))
    corpus = Corpus(meta["task"], examples, meta["name"], meta["seed"])
    corpus.validate()
    return corpus


def corpus_exists(corpus_dir: Path) -> bool:
    return (corpus_dir / "corpus.json").exists() and (corpus_dir / "manifest.jsonl").exists()


# ---------------------------------------------------------------------------
# Wordpiece vocabulary
# ---------------------------------------------------------------------------

def save_wordpiece(model: WordpieceModel, path: Path) -> Path:
    """One vocabulary entry per line; line number = id."""
    ensure_dir(path.parent)
    path.write_text("\n".join(model.vocabulary) + "\n", encoding="utf-8")
    return path


def load_wordpiece(path: Path) -> WordpieceModel:
    if not path.exists():
        raise FileNotFoundError(f"Missing file: {path}")
    entries = path.read_text(encoding="utf-8").split("\n")
    if entries and entries[-1] == "":
        entries = entries[:-1]
    return WordpieceModel(tuple(entries))


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

@dataclass
class Checkpoint:
    """Named parameters plus what is needed to rebuild and resume."""

    params: Dict[str, np.ndarray]
    config: Dict[str, Any]
    fingerprint: str
    step: int = 0
    seed: int = 0
    rng_state: Optional[Dict[str, Any]] = None
    frozen: List[str] = field(default_factory=list)
    optimizer: Optional[Dict[str, Any]] = None


def _pack(arrays: Mapping[str, np.ndarray], offset: int):
    directory = []
    blobs = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype="<f8")
        directory.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    return directory, blobs, offset


def write_checkpoint(ckpt: Checkpoint, path: Path) -> Path:
    """8-byte little-endian header length, JSON header, float64 little-endian payload."""
    ensure_dir(path.parent)
    param_dir, param_blobs, end = _pack(ckpt.params, 0)
    opt_header = None
    opt_blobs: List[bytes] = []
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        m_dir, m_blobs, end = _pack(opt["m"], end)
        v_dir, v_blobs, end = _pack(opt["v"], end)
        opt_header = {k: opt[k] for k in ("lr", "beta1", "beta2", "eps", "step")}
        opt_header.update({"m": m_dir, "v": v_dir})
        opt_blobs = m_blobs + v_blobs
    header = {
        "version": CHECKPOINT_VERSION,
        "fingerprint": ckpt.fingerprint,
        "config": ckpt.config,
        "step": int(ckpt.step),
        "seed": int(ckpt.seed),
        "rng_state": ckpt.rng_state,
        "frozen": list(ckpt.frozen),
        "params": param_dir,
        "optimizer": opt_header,
        "payload_bytes": end,
    }
    head = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(len(head).to_bytes(8, "little"))
        fh.write(head)
        for blob in param_blobs + opt_blobs:
            fh.write(blob)
    return path


def _unpack(directory, payload: bytes, path: Path) -> Dict[str, np.ndarray]:
    out = {}
    for entry in directory:
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        start = int(entry["offset"])
        stop = start + 8 * count
        if stop > len(payload):
            raise CheckpointError(f"{path}: payload truncated at {entry['name']}")
        out[entry["name"]] = np.frombuffer(payload[start:stop], dtype="<f8").astype(np.float64).reshape(entry["shape"])
    return out


def read_checkpoint(path: Path) -> Checkpoint:
    if not path.exists():
        raise FileNotFoundError(f"Missing checkpoint: {path}")
    raw = path.read_bytes()
    if len(raw) < 8:
        raise CheckpointError(f"{path}: file too short")
    size = int.from_bytes(raw[:8], "little")
    try:
        header = json.loads(raw[8:8 + size].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from exc
    validate_schema(header, ["version", "fingerprint", "config", "params", "payload_bytes"], str(path))
    if header["version"] != CHECKPOINT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {header['version']}")
    payload = raw[8 + size:]
    if len(payload) != header["payload_bytes"]:
        raise CheckpointError(f"{path}: payload is {len(payload)} bytes, header says {header['payload_bytes']}")
    optimizer = None
    if header.get("optimizer"):
        opt = header["optimizer"]
        optimizer = {k: opt[k] for k in ("lr", "beta1", "beta2", "eps", "step")}
        optimizer["m"] = _unpack(opt["m"], payload, path)
        optimizer["v"] = _unpack(opt["v"], payload, path)
    return Checkpoint(
        params=_unpack(header["params"], payload, path),
        config=header["config"],
        fingerprint=header["fingerprint"],
        step=int(header.get("step", 0)),
        seed=int(header.get("seed", 0)),
        rng_state=header.get("rng_state"),
        frozen=list(header.get("frozen", [])),
        optimizer=optimizer,
    )
