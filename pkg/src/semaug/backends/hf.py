"""Adapters for pretrained captioning, image-text and diffusion models.

Heavy dependencies (``torch``, ``transformers``, ``diffusers``) are imported
on construction only. None of this is needed for the fake backends.
"""

from __future__ import annotations

from typing import Any, Sequence

import numpy as np

from .base import CaptionerCapabilities


def effective_denoising_steps(noise_rate: float, denoising_steps: int = 100) -> int:
    """Number of denoising steps actually run for an img2img strength of ``noise_rate``."""
    return int(round(noise_rate * denoising_steps))


def _device(device: str | None) -> str:
    import torch

    if device:
        return device
    return "cuda" if torch.cuda.is_available() else "cpu"


class BlipCaptioner:
    backend_id = "blip"
    capabilities = CaptionerCapabilities(modes=frozenset({"beam", "nucleus"}), max_count=64, min_len=1, max_len=64)
    max_concurrency = 1

    def __init__(self, model: str = "Salesforce/blip-image-captioning-base", device: str | None = None):
        from transformers import BlipForConditionalGeneration, BlipProcessor

        self.device = _device(device)
        self.processor = BlipProcessor.from_pretrained(model)
        self.model = BlipForConditionalGeneration.from_pretrained(model).to(self.device).eval()

    def caption(self, image: np.ndarray, config: Any, seed: int, hint: str | None = None) -> list[str]:
        import torch
        from PIL import Image

        inputs = self.processor(images=Image.fromarray(image), return_tensors="pt").to(self.device)
        kwargs: dict[str, Any] = dict(min_length=config.min_len, max_length=config.max_len,
                                      num_return_sequences=config.count)
        if config.mode == "nucleus":
            kwargs.update(do_sample=True, top_p=config.nucleus_p, top_k=0)
        else:
            # HF beam search cannot return more sequences than beams
            kwargs.update(num_beams=max(config.beam_width, config.count), do_sample=False)
        torch.manual_seed(seed % (2**63))
        with torch.no_grad():
            out = self.model.generate(**inputs, **kwargs)
        return [t.strip() for t in self.processor.batch_decode(out, skip_special_tokens=True)]


class ClipScorer:
    backend_id = "clip"
    similarity_range = (-1.0, 1.0)
    max_concurrency = 1

    def __init__(self, model: str = "openai/clip-vit-base-patch32", device: str | None = None):
        from transformers import CLIPModel, CLIPProcessor

        self.device = _device(device)
        self.processor = CLIPProcessor.from_pretrained(model)
        self.model = CLIPModel.from_pretrained(model).to(self.device).eval()
        self.dim = int(self.model.config.projection_dim)

    def _normalize(self, t):
        return (t / t.norm(dim=-1, keepdim=True)).cpu().numpy().astype(np.float64)

    def image_features(self, image: np.ndarray) -> np.ndarray:
        import torch
        from PIL import Image

        inputs = self.processor(images=Image.fromarray(image), return_tensors="pt").to(self.device)
        with torch.no_grad():
            return self._normalize(self.model.get_image_features(**inputs))[0]

    def text_features(self, text: str) -> np.ndarray:
        return self._text_features([text])[0]

    def _text_features(self, texts: Sequence[str]) -> np.ndarray:
        import torch

        inputs = self.processor(text=list(texts), return_tensors="pt", padding=True, truncation=True).to(self.device)
        with torch.no_grad():
            return self._normalize(self.model.get_text_features(**inputs))

    def image_text_similarity(self, image: np.ndarray, texts: Sequence[str]) -> list[float]:
        return [float(v) for v in self._text_features(texts) @ self.image_features(image)]

    def image_image_similarity(self, a: np.ndarray, b: np.ndarray) -> float:
        return float(self.image_features(a) @ self.image_features(b))


class StableDiffusionBackend:
    """img2img and text2img with weighted prompt embeddings.

    ``noise_rate`` becomes the img2img ``strength``; the pipeline then runs
    ``effective_denoising_steps(noise_rate, steps)`` denoising steps.
    """

    backend_id = "sd15"
    modes = frozenset({"img2img", "text2img"})
    max_concurrency = 1

    def __init__(self, model: str = "runwayml/stable-diffusion-v1-5", device: str | None = None,
                 dtype: str = "float16"):
        import torch
        from diffusers import StableDiffusionImg2ImgPipeline, StableDiffusionPipeline

        self.device = _device(device)
        torch_dtype = getattr(torch, dtype) if self.device != "cpu" else torch.float32
        self.img2img = StableDiffusionImg2ImgPipeline.from_pretrained(model, torch_dtype=torch_dtype,
                                                                      safety_checker=None).to(self.device)
        self.text2img = StableDiffusionPipeline(**self.img2img.components).to(self.device)

    def _prompt_embeds(self, prompt: Any):
        import torch

        from ..prompting import weight_embeddings

        pipe = self.img2img
        text = prompt if isinstance(prompt, str) else prompt.rendered_text
        tok = pipe.tokenizer(text, padding="max_length", max_length=pipe.tokenizer.model_max_length,
                             truncation=True, return_tensors="pt", return_offsets_mapping=True)
        with torch.no_grad():
            hidden = pipe.text_encoder(tok.input_ids.to(self.device))[0]
        if isinstance(prompt, str):
            return hidden
        ids = prompt.span_ids_for_offsets([tuple(o) for o in tok.offset_mapping[0].tolist()])
        weighted = weight_embeddings(hidden[0].float().cpu().numpy(), ids, prompt.w_l, prompt.w_c,
                                     renormalize=prompt.renormalize)
        return torch.from_numpy(weighted).to(hidden.dtype).to(self.device)[None]

    def generate(self, image, prompt, guidance, noise_rate, seed, steps=100, size=None, mode=None):
        import torch
        from PIL import Image

        generator = torch.Generator(device=self.device).manual_seed(seed % (2**63))
        embeds = self._prompt_embeds(prompt)
        if image is None:
            h, w = size or (512, 512)
            out = self.text2img(prompt_embeds=embeds, guidance_scale=guidance, num_inference_steps=steps,
                                height=h, width=w, generator=generator).images[0]
            return np.asarray(out.convert("RGB"), dtype=np.uint8)
        src = Image.fromarray(image)
        out = self.img2img(prompt_embeds=embeds, image=src, strength=noise_rate, guidance_scale=guidance,
                           num_inference_steps=steps, generator=generator).images[0]
        # diffusion VAEs work in multiples of 8; restore the source size
        out = out.convert("RGB").resize(src.size, Image.BICUBIC)
        return np.asarray(out, dtype=np.uint8)
