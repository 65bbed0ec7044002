import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from vtalign.store import (
    ClassTextBundle,
    EmbeddingDataset,
    FrameEmbeddings,
    TextTokens,
    frozen_array,
)


def random_text(rng: np.random.Generator, tokens: int, dim: int) -> TextTokens:
    return TextTokens(
        tokens=frozen_array(rng.standard_normal((tokens, dim))),
        summary=frozen_array(rng.standard_normal(dim)),
    )


def random_dataset(rng: np.random.Generator, n_videos: int = 2, n_classes: int = 2,
                   frames: int = 4, dim: int = 8, subtexts: int = 2,
                   tokens: int = 3) -> EmbeddingDataset:
    classes = tuple(
        ClassTextBundle(
            class_name=f"class_{c}",
            global_text=random_text(rng, tokens, dim),
            subtexts=tuple(random_text(rng, tokens, dim) for _ in range(subtexts)),
        )
        for c in range(n_classes)
    )
    videos = tuple(
        FrameEmbeddings(
            video_id=f"vid_{i}",
            frames=frozen_array(rng.standard_normal((frames, dim))),
            labels=(int(rng.integers(n_classes)),),
        )
        for i in range(n_videos)
    )
    return EmbeddingDataset(dim=dim, videos=videos, classes=classes)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)
