"""Encoder backends producing frame and text embeddings in a joint space.

The mock encoder is fully deterministic (embeddings are seeded from content
hashes), runs offline, and exists so every pipeline stage can be exercised
without model weights.  The hf backend runs a real CLIP-style checkpoint via
transformers when it is installed and the weights are available; token
embeddings are the final-layer token states projected into the joint space,
excluding padding.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import EmptyText, EncoderFailure


def _seeded_unit(key: str, dim: int) -> np.ndarray:
    digest = hashlib.sha256(key.encode()).digest()
    rng = np.random.default_rng(np.frombuffer(digest[:16], dtype=np.uint64))
    v = rng.standard_normal(dim)
    return v / np.sqrt((v * v).sum())


class MockEncoder:
    """Deterministic stand-in: hashes content into stable pseudo-embeddings."""

    deterministic = True

    def __init__(self, dim: int = 16):
        if dim < 1:
            raise EncoderFailure(f"mock encoder dim must be >= 1, got {dim}")
        self.dim = dim
        self.name = f"mock:{dim}"

    def encode_frame(self, frame: np.ndarray) -> np.ndarray:
        data = np.ascontiguousarray(frame)
        return _seeded_unit("frame|" + hashlib.sha256(data.tobytes()).hexdigest(),
                            self.dim)

    def encode_text(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        """Per-word token matrix plus a sentence summary, padding-free by
        construction (one row per whitespace-separated word)."""
        if not text.strip():
            raise EmptyText("cannot encode empty text")
        words = text.split()
        tokens = np.stack([_seeded_unit(f"tok|{w}", self.dim) for w in words])
        summary = _seeded_unit("sum|" + text, self.dim)
        # pull the summary toward the token mean so word and sentence level
        # live in one coherent space, as a joint encoder's outputs do
        mixed = 0.5 * summary + 0.5 * tokens.mean(axis=0)
        return tokens, mixed / np.sqrt((mixed * mixed).sum())


class HfClipEncoder:
    """CLIP checkpoint via transformers; requires installed weights."""

    deterministic = True

    def __init__(self, model_name: str = "openai/clip-vit-base-patch32"):
        try:
            import torch  # noqa: F401
            from transformers import CLIPModel, CLIPProcessor
        except ImportError as exc:
            raise EncoderFailure(
                "the hf encoder needs transformers and torch installed") from exc
        try:
            self.model = CLIPModel.from_pretrained(model_name)
            self.processor = CLIPProcessor.from_pretrained(model_name)
        except Exception as exc:
            raise EncoderFailure(f"cannot load {model_name}: {exc}") from exc
        self.model.eval()
        self.dim = self.model.config.projection_dim
        self.name = f"hf:{model_name}"

    def encode_frame(self, frame: np.ndarray) -> np.ndarray:
        import torch
        inputs = self.processor(images=frame, return_tensors="pt")
        with torch.no_grad():
            feats = self.model.get_image_features(**inputs)
        return feats[0].double().numpy()

    def encode_text(self, text: str) -> tuple[np.ndarray, np.ndarray]:
        import torch
        if not text.strip():
            raise EmptyText("cannot encode empty text")
        inputs = self.processor(text=[text], return_tensors="pt", padding=True)
        with torch.no_grad():
            out = self.model.text_model(**inputs)
            # final-layer token states projected into the joint space
            tokens = self.model.text_projection(out.last_hidden_state)[0]
            summary = self.model.get_text_features(**inputs)[0]
        mask = inputs["attention_mask"][0].bool()
        return tokens[mask].double().numpy(), summary.double().numpy()


def make_encoder(spec: str):
    """Encoder factory: 'mock:<dim>' or 'hf:<model-name>'."""
    if spec.startswith("mock:"):
        return MockEncoder(int(spec.split(":", 1)[1]))
    if spec == "mock":
        return MockEncoder()
    if spec.startswith("hf:"):
        return HfClipEncoder(spec.split(":", 1)[1])
    raise EncoderFailure(f"unknown encoder spec {spec!r} (use mock:<dim> or hf:<model>)")
