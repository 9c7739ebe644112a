"""Backend deployment configuration."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class BackendConfig:
    chat_model: str = "tiny"
    loss_model: str = "tiny"
    embed_model: str = "tiny"
    device: str = "cpu"
    max_batch: int = 64
    port: int = 8330
    normalize_embeddings: bool = True

    def __post_init__(self) -> None:
        if not (self.chat_model or self.loss_model or self.embed_model):
            raise ValueError("configure at least one of chat/loss/embed")
        if self.max_batch < 1:
            raise ValueError("max_batch must be >= 1")
