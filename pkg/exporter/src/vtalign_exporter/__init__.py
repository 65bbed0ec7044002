"""Embedding exporter for the vtalign store format."""

from .encoders import HfClipEncoder, MockEncoder, make_encoder
from .export import ExportJob, export_text_embeddings, export_video_embeddings, sample_frames
from .subtexts import generate_subtexts

__version__ = "0.1.0"
