"""nmeb-export: encode media posts into NMEB embedding bundles.

Takes a JSONL manifest of posts (text plus image, video, and optional
audio files), runs one encoder per modality, and writes a version 1 NMEB
file with one 768-d vector per modality per post. The offline hashed
encoder is the default; pretrained transformer checkpoints are available
behind the [pretrained] extra.
"""

__version__ = "0.1.0"

from nmeb_export.encoders import EMBED_DIM, HashedEncoder, PretrainedEncoder
from nmeb_export.errors import ExportError, ManifestError, MediaError
from nmeb_export.export import ExportConfig, ExportReport, SkippedPost, export
from nmeb_export.frames import frame_to_image, residual_frame_index, sample_frame_indices
from nmeb_export.manifest import PostManifest, load_manifest
from nmeb_export.nmeb import write_nmeb

__all__ = [
    "EMBED_DIM",
    "ExportConfig",
    "ExportError",
    "ExportReport",
    "HashedEncoder",
    "ManifestError",
    "MediaError",
    "PostManifest",
    "PretrainedEncoder",
    "SkippedPost",
    "export",
    "frame_to_image",
    "load_manifest",
    "residual_frame_index",
    "sample_frame_indices",
    "write_nmeb",
    "__version__",
]
