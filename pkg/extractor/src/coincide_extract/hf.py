"""Real-model backend: attention-output taps on a Hugging Face VLM.

Optional path — everything here imports torch/transformers lazily, so
the package works without them installed. Activations are captured with
forward hooks on each decoder block's self-attention module (the stream
right after attention, before the block's MLP). The visual/text token
boundary is read from the processed inputs: the processor expands the
image placeholder token into a contiguous block of patch embeddings,
and the model config says which token id marks it. This path is exercised
only by an opt-in smoke test; the hash-seeded stub covers everything
else deterministically.
"""

from __future__ import annotations

import numpy as np

from .dataset import Sample
from .errors import ActivationError, ConfigError, SegmentationError
from .stub import TokenLayout


class HfAttentionTap:
    """Per-layer self-attention outputs from a pretrained VLM."""

    def __init__(self, model_id: str, device: str = "cpu"):
        try:
            import torch
            from transformers import AutoModelForCausalLM, AutoProcessor
        except ImportError as exc:
            raise ConfigError(
                "the 'hf' backend needs torch and transformers",
                hint="pip install 'coincide-extract[real]'",
            ) from exc
        self._torch = torch
        self.model_id = model_id
        self.device = device
        self.processor = AutoProcessor.from_pretrained(model_id, trust_remote_code=True)
        self.model = (
            AutoModelForCausalLM.from_pretrained(model_id, trust_remote_code=True)
            .to(device)
            .eval()
        )
        self._attn_modules = [
            module
            for name, module in self.model.named_modules()
            if name.endswith("self_attn")
        ]
        if not self._attn_modules:
            raise ConfigError(
                f"{model_id}: found no '*self_attn' modules to hook",
                hint="this backend expects a llava/llama-style decoder stack",
            )
        self.depth = len(self._attn_modules)
        self._cached_id: str | None = None
        self._cached_streams: dict[int, np.ndarray] = {}
        self._cached_layout: TokenLayout | None = None

    # ---- engine protocol ------------------------------------------------

    def layout(self, sample: Sample) -> TokenLayout:
        self._ensure(sample)
        assert self._cached_layout is not None
        return self._cached_layout

    def activations(self, sample: Sample, layer: int) -> np.ndarray:
        if not 0 <= layer < self.depth:
            raise ConfigError(f"layer {layer} outside the model's depth [0, {self.depth})")
        self._ensure(sample)
        return self._cached_streams[layer]

    # ---- internals -------------------------------------------------------

    def _ensure(self, sample: Sample) -> None:
        if self._cached_id == sample.sample_id:
            return
        from PIL import Image

        image = Image.open(sample.image).convert("RGB")
        inputs = self.processor(text=sample.text, images=image, return_tensors="pt")
        inputs = {k: v.to(self.device) for k, v in inputs.items()}

        captured: dict[int, np.ndarray] = {}
        hooks = []

        def tap(index):
            def hook(_module, _args, output):
                tensor = output[0] if isinstance(output, tuple) else output
                captured[index] = (
                    tensor.detach().to("cpu", self._torch.float32).numpy()[0]
                )

            return hook

        for index, module in enumerate(self._attn_modules):
            hooks.append(module.register_forward_hook(tap(index)))
        try:
            with self._torch.no_grad():
                self.model(**inputs)
        finally:
            for handle in hooks:
                handle.remove()
        if len(captured) != self.depth:
            raise ActivationError(
                f"captured {len(captured)} of {self.depth} attention outputs"
            )

        self._cached_layout = self._boundary(inputs, next(iter(captured.values())))
        self._cached_streams = captured
        self._cached_id = sample.sample_id

    def _boundary(self, inputs: dict, stream: np.ndarray) -> TokenLayout:
        """Visual block position from the model's own input layout.

        The processor leaves one (or more) image placeholder ids in
        input_ids; the embedding step replaces that span with the patch
        sequence. The captured stream is therefore the text ids with the
        placeholder swapped for n_visual patches, so the patch count is
        the length difference and the block starts at the placeholder.
        """
        image_token_id = getattr(self.model.config, "image_token_index", None)
        if image_token_id is None:
            image_token_id = getattr(self.model.config, "image_token_id", None)
        if image_token_id is None:
            raise SegmentationError(
                f"{self.model_id}: config exposes no image token id",
                hint="cannot locate the visual block without the model's layout",
            )
        ids = inputs["input_ids"][0].tolist()
        placeholder_positions = [i for i, t in enumerate(ids) if t == image_token_id]
        if not placeholder_positions:
            raise SegmentationError("input has no image placeholder token")
        n_tokens = stream.shape[0]
        n_placeholder = len(placeholder_positions)
        n_visual = n_tokens - (len(ids) - n_placeholder)
        if n_visual < 1:
            raise SegmentationError(
                f"stream of {n_tokens} tokens leaves no room for patches "
                f"({len(ids)} input ids, {n_placeholder} placeholders)"
            )
        start = placeholder_positions[0]
        if placeholder_positions != list(range(start, start + n_placeholder)):
            raise SegmentationError("image placeholder span is not contiguous")
        return TokenLayout(
            n_visual=n_visual, n_text=n_tokens - n_visual, visual_start=start
        )
