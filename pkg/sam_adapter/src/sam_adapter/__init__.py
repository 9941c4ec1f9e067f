"""Export SAM vision-encoder feature maps as UQFM0001 container files."""

from .container import read_header, read_map, write_map
from .encoders import HfSamEncoder, StubEncoder, make_encoder
from .extract import (ExtractJob, ExtractSummary, images_from_annotations,
                      images_from_directory, run_extract)
from .preprocess import PreprocessedImage, content_grid, load_rgb, preprocess

__version__ = "0.1.0"
