"""Fine-tuning a pre-trained bidirectional encoder with a classification head."""

from __future__ import annotations

import copy
import logging
import os
from pathlib import Path

import numpy as np

from ..errors import CheckpointNotFoundError, SnapError
from .core import (
    ClassifierConfig,
    StoryDataset,
    TrainedClassifier,
    accuracy,
    check_datasets,
    train_with_early_stopping,
)

log = logging.getLogger(__name__)

MODEL_CACHE_ENV = "SNAP_MODEL_CACHE"


def resolve_checkpoint(backbone_id: str, allow_download: bool = False) -> str:
    """Local directory holding ``backbone_id``.

    Looks at ``backbone_id`` as a path, then under ``$SNAP_MODEL_CACHE`` as
    ``<cache>/<id>`` and ``<cache>/<id with / replaced by -->``. With
    ``allow_download`` the bare identifier is returned for the hub to fetch.
    """
    if Path(backbone_id).is_dir():
        return str(backbone_id)
    cache = os.environ.get(MODEL_CACHE_ENV)
    if cache:
        for name in (backbone_id, backbone_id.replace("/", "--")):
            candidate = Path(cache) / name
            if candidate.is_dir():
                return str(candidate)
    if allow_download:
        return backbone_id
    raise CheckpointNotFoundError(
        f"backbone {backbone_id!r} not found locally (set {MODEL_CACHE_ENV} or enable allow_download)"
    )


def _torch():
    import torch

    return torch


def build_network(backbone, hidden: int, n_classes: int, dropout: float, head: str):
    torch = _torch()
    nn = torch.nn

    class StoryClassifierNet(nn.Module):
        def __init__(self):
            super().__init__()
            self.backbone = backbone
            if head == "mlp":
                self.head = nn.Sequential(
                    nn.Dropout(dropout),
                    nn.Linear(hidden, hidden),
                    nn.ReLU(),
                    nn.Dropout(dropout),
                    nn.Linear(hidden, n_classes),
                )
            else:
                self.head = nn.Sequential(nn.Dropout(dropout), nn.Linear(hidden, n_classes), nn.ReLU())

        def forward(self, input_ids, attention_mask, **extra):
            out = self.backbone(input_ids=input_ids, attention_mask=attention_mask, **extra)
            cls = out.last_hidden_state[:, 0]
            return self.head(cls)

    return StoryClassifierNet()


class TransformerClassifier(TrainedClassifier):
    backend = "transformer"

    def __init__(self, network, tokenizer, label_vocabulary, config, training_curve=(), device="cpu"):
        super().__init__(label_vocabulary, config, training_curve)
        self.network = network
        self.tokenizer = tokenizer
        self.device = device
        self._inputs = _accepted_inputs(network)
        self.network.eval()

    def _encode(self, texts):
        enc = self.tokenizer(
            list(texts),
            padding=True,
            truncation=True,
            max_length=self.config.max_input_tokens,
            return_tensors="pt",
        )
        return {k: v.to(self.device) for k, v in enc.items() if k in self._inputs}

    def score_texts(self, texts, batch_size: int = 32):
        torch = _torch()
        self.network.eval()
        out = []
        with torch.no_grad():
            for start in range(0, len(texts), batch_size):
                logits = self.network(**self._encode(texts[start : start + batch_size]))
                out.append(logits.float().cpu().numpy())
        return np.concatenate(out, axis=0)


def _accepted_inputs(network) -> set[str]:
    import inspect

    return set(inspect.signature(network.backbone.forward).parameters)


def load_tokenizer(path: str, max_input_tokens: int):
    from transformers import AutoTokenizer

    tok = AutoTokenizer.from_pretrained(path)
    # keep the end of long stories: the most recent activities sit there
    tok.truncation_side = "left"
    tok.model_max_length = max_input_tokens
    return tok


def fit(train: StoryDataset, validation: StoryDataset, config: ClassifierConfig = ClassifierConfig(), device: str | None = None) -> TransformerClassifier:
    """Fine-tune ``config.backbone_id`` on story texts with validation early stopping."""
    check_datasets(train, validation)
    torch = _torch()
    from transformers import AutoModel

    path = resolve_checkpoint(config.backbone_id, config.allow_download)
    torch.manual_seed(config.seed)
    device = device or ("cuda" if torch.cuda.is_available() else "cpu")
    try:
        backbone = AutoModel.from_pretrained(path)
    except OSError as exc:
        raise CheckpointNotFoundError(f"cannot load backbone from {path}: {exc}") from exc
    tokenizer = load_tokenizer(path, config.max_input_tokens)
    net = build_network(backbone, backbone.config.hidden_size, len(train.label_vocabulary), config.dropout, config.head)
    net.to(device)
    model = TransformerClassifier(net, tokenizer, train.label_vocabulary, config, device=device)

    optimizer = torch.optim.Adam(net.parameters(), lr=config.learning_rate)
    loss_fn = torch.nn.CrossEntropyLoss()
    texts = train.texts
    y = torch.as_tensor(train.targets())
    gen = torch.Generator().manual_seed(config.seed)

    def run_epoch(epoch):
        net.train()
        order = torch.randperm(len(texts), generator=gen).tolist()
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            batch = model._encode([texts[i] for i in idx])
            try:
                logits = net(**batch)
                loss = loss_fn(logits, y[idx].to(device))
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
            except RuntimeError as exc:
                if "out of memory" in str(exc).lower():
                    raise SnapError(
                        f"out of memory at batch size {config.batch_size}; lower batch_size or max_input_tokens"
                    ) from exc
                raise
            total += loss.item() * len(idx)
        return total / len(texts)

    def val_accuracy():
        return accuracy(model.predict_labels(validation.texts), validation.labels)

    def snapshot():
        return {k: v.detach().cpu().clone() for k, v in net.state_dict().items()}

    best, curve = train_with_early_stopping(
        run_epoch,
        val_accuracy,
        snapshot,
        config.max_epochs,
        config.patience_epochs,
        on_epoch=lambda r: log.info("epoch %d loss %.4f val_acc %.4f", r.epoch, r.train_loss, r.val_accuracy),
    )
    net.load_state_dict(best)
    model.training_curve = curve
    model.network.eval()
    return model


def rebuild(backbone_config: dict, state: dict, tokenizer_dir: str, label_vocabulary, config, curve):
    """Reassemble a saved network without touching the original checkpoint."""
    torch = _torch()
    from transformers import AutoConfig, AutoModel

    cfg_dict = copy.deepcopy(backbone_config)
    model_type = cfg_dict.pop("model_type")
    backbone = AutoModel.from_config(AutoConfig.for_model(model_type, **cfg_dict))
    net = build_network(backbone, backbone.config.hidden_size, len(label_vocabulary), config.dropout, config.head)
    net.load_state_dict({k: torch.as_tensor(v) for k, v in state.items()})
    tokenizer = load_tokenizer(tokenizer_dir, config.max_input_tokens)
    return TransformerClassifier(net, tokenizer, label_vocabulary, config, curve)
