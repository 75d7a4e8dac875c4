"""Neural similarity metrics between a render and its target image.

Both metrics need pretrained models (the 'models' extra): LPIPS with the
VGG backbone, and CLIP similarity between the render's image embedding and
the embedding of a caption generated once for the target. Without the
models installed, calls fail with an explicit diagnostic instead of a bare
ImportError.
"""

from __future__ import annotations

import json

import numpy as np

from .errors import ModelUnavailableError
from .pngio import load_rgb


def _to_tensor(torch, img: np.ndarray):
    # HWC [0,1] float -> NCHW [-1,1] float32
    t = torch.from_numpy(img.transpose(2, 0, 1)[None]).float()
    return t * 2.0 - 1.0


def neural_metrics(render_path: str, target_path: str,
                   device: str | None = None) -> dict:
    """Returns {"lpips": float, "clip_similarity": float}."""
    try:
        import torch
        import lpips
    except ImportError as exc:
        raise ModelUnavailableError(
            "neural metrics need torch and lpips; install the 'models' extra "
            "(pip install 'sds-toolchain[models]')") from exc
    try:
        from transformers import (CLIPModel, CLIPProcessor,
                                  BlipForConditionalGeneration, BlipProcessor)
    except ImportError as exc:
        raise ModelUnavailableError(
            "CLIP scoring needs transformers; install the 'models' extra") from exc

    device = device or ("cuda" if torch.cuda.is_available() else "cpu")
    render = load_rgb(render_path)
    target = load_rgb(target_path)
    if render.shape != target.shape:
        raise ModelUnavailableError(
            f"images differ in shape: {render.shape} vs {target.shape}")

    loss_fn = lpips.LPIPS(net="vgg").to(device)
    with torch.no_grad():
        d = loss_fn(_to_tensor(torch, render).to(device),
                    _to_tensor(torch, target).to(device))
    lpips_value = float(d.item())

    cap_proc = BlipProcessor.from_pretrained("Salesforce/blip-image-captioning-base")
    cap_model = BlipForConditionalGeneration.from_pretrained(
        "Salesforce/blip-image-captioning-base").to(device)
    target_u8 = np.clip(np.rint(target * 255.0), 0, 255).astype(np.uint8)
    with torch.no_grad():
        cap_in = cap_proc(images=target_u8, return_tensors="pt").to(device)
        caption = cap_proc.decode(cap_model.generate(**cap_in, max_new_tokens=30)[0],
                                  skip_special_tokens=True)

    clip_proc = CLIPProcessor.from_pretrained("openai/clip-vit-base-patch32")
    clip_model = CLIPModel.from_pretrained("openai/clip-vit-base-patch32").to(device)
    render_u8 = np.clip(np.rint(render * 255.0), 0, 255).astype(np.uint8)
    with torch.no_grad():
        inputs = clip_proc(text=[caption], images=render_u8,
                           return_tensors="pt", padding=True).to(device)
        img_emb = clip_model.get_image_features(pixel_values=inputs.pixel_values)
        txt_emb = clip_model.get_text_features(input_ids=inputs.input_ids,
                                               attention_mask=inputs.attention_mask)
    img_emb = img_emb / img_emb.norm(dim=-1, keepdim=True)
    txt_emb = txt_emb / txt_emb.norm(dim=-1, keepdim=True)
    clip_sim = float((img_emb * txt_emb).sum().item())

    return {"lpips": lpips_value, "clip_similarity": clip_sim, "caption": caption}


def metrics_to_json(metrics: dict) -> str:
    return json.dumps(metrics, indent=2, sort_keys=True) + "\n"
