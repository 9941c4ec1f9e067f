"""Feature encoders: the SAM vision encoder and a deterministic stub.

An encoder turns preprocessed square inputs into spatial feature grids of
shape (resolution/patch, resolution/patch, dim). The stub is a pure-numpy
stand-in with the same geometry, used for tests and dry runs where no
checkpoint exists; the real backend loads a SAM checkpoint through
transformers and is only imported when requested.
"""

from __future__ import annotations

import numpy as np


class StubEncoder:
    """Deterministic content-sensitive encoder with SAM-like output geometry.

    Patch-averages the normalized pixels and projects the 3 channels to
    `dim` with a seeded fixed random matrix. Identical inputs and seeds
    produce bit-identical grids.
    """

    name = "stub"

    def __init__(self, resolution: int = 1024, patch: int = 16, dim: int = 256,
                 seed: int = 0):
        if resolution % patch:
            raise ValueError(f"resolution {resolution} not divisible by patch {patch}")
        self.resolution = resolution
        self.patch = patch
        self.dim = dim
        rng = np.random.default_rng(seed)
        self._projection = rng.standard_normal((3, dim)).astype(np.float32)
        self._bias = rng.standard_normal(dim).astype(np.float32)

    def encode_batch(self, batch: list[np.ndarray]) -> np.ndarray:
        grids = []
        cells = self.resolution // self.patch
        for pixels in batch:
            if pixels.shape != (self.resolution, self.resolution, 3):
                raise ValueError(f"expected {(self.resolution, self.resolution, 3)}, "
                                 f"got {pixels.shape}")
            pooled = pixels.reshape(cells, self.patch, cells, self.patch, 3) \
                .mean(axis=(1, 3))
            grids.append(pooled @ self._projection + self._bias)
        return np.stack(grids).astype(np.float32)


class HfSamEncoder:
    """SAM vision encoder loaded from a local checkpoint via transformers.

    `layer` selects the exported feature map: "neck" is the encoder's final
    spatial output (256 channels at resolution/16); "trunk" captures the
    last transformer block before the neck (the ViT hidden width).
    """

    name = "sam-hf"

    def __init__(self, checkpoint: str, layer: str = "neck",
                 resolution: int = 1024, device: str = "cpu"):
        if layer not in ("neck", "trunk"):
            raise ValueError(f"unknown layer {layer!r}")
        try:
            import torch
            from transformers import SamModel
        except ImportError as exc:  # pragma: no cover - optional extra
            raise RuntimeError(
                "the SAM backend needs the [sam] extra (torch, transformers)") from exc
        self._torch = torch
        try:
            model = SamModel.from_pretrained(checkpoint, local_files_only=True)
        except Exception as exc:
            raise RuntimeError(f"cannot load SAM checkpoint {checkpoint!r}: {exc}") from exc
        self._encoder = model.vision_encoder.to(device).eval()
        self.layer = layer
        self.resolution = resolution
        self.patch = getattr(model.config.vision_config, "patch_size", 16)
        self.device = device
        if layer == "neck":
            self.dim = model.config.vision_config.output_channels
        else:
            self.dim = model.config.vision_config.hidden_size

    def encode_batch(self, batch: list[np.ndarray]) -> np.ndarray:
        torch = self._torch
        stacked = np.stack(batch).transpose(0, 3, 1, 2)  # BCHW
        tensor = torch.from_numpy(stacked).to(self.device)
        captured = {}
        handle = None
        if self.layer == "trunk":
            def hook(_module, _inputs, output):
                captured["trunk"] = output[0] if isinstance(output, tuple) else output

            handle = self._encoder.layers[-1].register_forward_hook(hook)
        try:
            with torch.no_grad():
                output = self._encoder(tensor)
        finally:
            if handle is not None:
                handle.remove()
        if self.layer == "neck":
            grids = output.last_hidden_state.permute(0, 2, 3, 1)  # BCHW -> BHWC
        else:
            grids = captured["trunk"]  # already BHWC
        return grids.cpu().numpy().astype(np.float32)


def make_encoder(name: str, *, checkpoint: str | None = None, layer: str = "neck",
                 resolution: int = 1024, dim: int = 256, seed: int = 0,
                 device: str = "cpu"):
    if name == "stub":
        return StubEncoder(resolution=resolution, dim=dim, seed=seed)
    if name == "sam-hf":
        if not checkpoint:
            raise ValueError("the sam-hf encoder needs --checkpoint")
        return HfSamEncoder(checkpoint, layer=layer, resolution=resolution,
                            device=device)
    raise ValueError(f"unknown encoder {name!r}")
