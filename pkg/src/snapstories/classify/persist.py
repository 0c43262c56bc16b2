"""Single-file model persistence.

Layout: 7-byte magic ``SNAPCLF``, one format-version byte, then an ``.npz``
archive holding a JSON ``meta`` blob and the backend's arrays.
"""

from __future__ import annotations

import io
import json
import tempfile
import zipfile
from pathlib import Path

import numpy as np

from ..errors import ModelFormatError
from .core import ClassifierConfig, EpochRecord, TrainedClassifier
from .reference import ReferenceClassifier

MAGIC = b"SNAPCLF"
FORMAT_VERSION = 1


def _meta(model: TrainedClassifier) -> dict:
    return {
        "backend": model.backend,
        "label_vocabulary": model.label_vocabulary,
        "config": model.config.to_dict(),
        "training_curve": [r.__dict__ for r in model.training_curve],
    }


def _transformer_arrays(model) -> tuple[dict, dict]:
    arrays = {f"state/{k}": v.detach().cpu().numpy() for k, v in model.network.state_dict().items()}
    with tempfile.TemporaryDirectory() as tmp:
        model.tokenizer.save_pretrained(tmp)
        for f in Path(tmp).iterdir():
            arrays[f"tokenizer/{f.name}"] = np.frombuffer(f.read_bytes(), dtype=np.uint8)
    extra = {"backbone_config": model.network.backbone.config.to_dict()}
    return arrays, extra


def save(model: TrainedClassifier, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = _meta(model)
    if model.backend == "reference":
        vocab = sorted(model.vocabulary.items(), key=lambda kv: kv[1])
        meta["ngrams"] = [k for k, _ in vocab]
        arrays = {"weights": model.weights, "bias": model.bias}
    elif model.backend == "transformer":
        arrays, extra = _transformer_arrays(model)
        meta.update(extra)
    else:
        raise ModelFormatError(f"cannot persist backend {model.backend!r}")
    buf = io.BytesIO()
    np.savez(buf, meta=np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8), **arrays)
    path.write_bytes(MAGIC + bytes([FORMAT_VERSION]) + buf.getvalue())
    return path


def load(path: str | Path) -> TrainedClassifier:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"no model at {path}")
    raw = path.read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ModelFormatError(f"{path}: not a saved classifier (bad magic header)")
    version = raw[len(MAGIC)] if len(raw) > len(MAGIC) else None
    if version != FORMAT_VERSION:
        raise ModelFormatError(f"{path}: format version {version} unsupported (expected {FORMAT_VERSION})")
    try:
        archive = np.load(io.BytesIO(raw[len(MAGIC) + 1 :]), allow_pickle=False)
        meta = json.loads(archive["meta"].tobytes().decode("utf-8"))
        arrays = {k: archive[k] for k in archive.files if k != "meta"}
    except (zipfile.BadZipFile, ValueError, KeyError, OSError) as exc:
        raise ModelFormatError(f"{path}: corrupt model file: {exc}") from exc

    config = ClassifierConfig.from_dict(meta["config"])
    curve = [EpochRecord(**r) for r in meta["training_curve"]]
    labels = meta["label_vocabulary"]
    if meta["backend"] == "reference":
        vocab = {g: i for i, g in enumerate(meta["ngrams"])}
        return ReferenceClassifier(vocab, arrays["weights"], arrays["bias"], labels, config, curve)
    if meta["backend"] == "transformer":
        from .transformer import rebuild

        state = {k[len("state/") :]: v for k, v in arrays.items() if k.startswith("state/")}
        with tempfile.TemporaryDirectory() as tmp:
            for k, v in arrays.items():
                if k.startswith("tokenizer/"):
                    (Path(tmp) / k[len("tokenizer/") :]).write_bytes(v.tobytes())
            return rebuild(meta["backbone_config"], state, tmp, labels, config, curve)
    raise ModelFormatError(f"{path}: unknown backend {meta['backend']!r}")
