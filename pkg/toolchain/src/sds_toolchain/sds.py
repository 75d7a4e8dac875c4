"""Score-distillation image simplification.

Optimizes the pixels of an image directly (the parameterization is the
identity, so the "rendered" image is the parameter tensor itself) by
repeatedly noising it with a DDPM forward step and nudging it against the
difference between the predicted and the injected noise:

    x_t   = sqrt(abar_t) * theta + sqrt(1 - abar_t) * eps
    e_hat = (1 + omega) * eps_cond - omega * eps_uncond
    theta <- clip(theta - step_size * (1 - abar_t) * e_hat_minus_eps, 0, 1)

The update happens in pixel space even when the noise predictor is backed
by a latent model; `DiffusionBackend` maps its latent prediction back to a
pixel-space noise estimate (see its docstring). The guidance text is muted
either by using an empty prompt (the default: conditional and unconditional
predictions collapse to the same tensor) or by setting the guidance scale
omega to zero; exactly one of the two must be active.

Snapshots of theta are written every `snapshot_interval` steps, the step-0
snapshot first, and the run emits the same `sequence.json` manifest layout
that native simplification sequences use, so the resulting directory can be
consumed anywhere a sequence directory is expected.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import cv2
import numpy as np

from .errors import ModelUnavailableError, ValidationError
from .pngio import load_rgb, save_rgb

MANIFEST_NAME = "sequence.json"

# DDPM linear beta schedule, the usual 1000-step discretization.
SCHEDULE_STEPS = 1000
_BETAS = np.linspace(1e-4, 0.02, SCHEDULE_STEPS)
ALPHA_BAR = np.cumprod(1.0 - _BETAS)


@dataclass(frozen=True)
class SDSConfig:
    """Knobs for one simplification run.

    The iteration budget and snapshot interval define the output sequence;
    step size and the timestep sampling window are implementation choices
    exposed here (and recorded in the output manifest) because no canonical
    values exist for them.
    """

    iterations: int = 80
    snapshot_interval: int = 20
    prompt: str = ""
    cfg_scale: float = 7.5
    t_min: int = 50
    t_max: int = 950
    step_size: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValidationError("iterations must be positive")
        if self.snapshot_interval < 1:
            raise ValidationError("snapshot interval must be positive")
        if self.iterations % self.snapshot_interval != 0:
            raise ValidationError(
                f"snapshot interval {self.snapshot_interval} must divide "
                f"the iteration count {self.iterations}")
        if not (1 <= self.t_min <= self.t_max < SCHEDULE_STEPS):
            raise ValidationError(
                f"timestep range [{self.t_min}, {self.t_max}] must sit inside "
                f"[1, {SCHEDULE_STEPS - 1}]")
        if self.step_size <= 0:
            raise ValidationError("step size must be positive")
        empty_prompt = self.prompt == ""
        zero_scale = self.cfg_scale == 0.0
        if empty_prompt == zero_scale:
            raise ValidationError(
                "exactly one guidance-muting mode must be active: either an "
                "empty prompt or a zero cfg_scale, not both and not neither")

    @property
    def muting_mode(self) -> str:
        return "empty_prompt" if self.prompt == "" else "zero_cfg"

    @property
    def n_levels(self) -> int:
        return self.iterations // self.snapshot_interval + 1


def cfg_combine(eps_cond: np.ndarray, eps_uncond: np.ndarray, omega: float) -> np.ndarray:
    """Classifier-free guidance blend of two noise predictions."""
    eps_cond = np.asarray(eps_cond)
    eps_uncond = np.asarray(eps_uncond)
    if eps_cond.shape != eps_uncond.shape:
        raise ValidationError(
            f"noise shapes differ: {eps_cond.shape} vs {eps_uncond.shape}")
    if np.array_equal(eps_cond, eps_uncond):
        # equal predictions make the blend omega-invariant; skip the
        # arithmetic so the invariance holds bit-for-bit
        return np.copy(eps_cond)
    return (1.0 + omega) * eps_cond - omega * eps_uncond


class SmoothingStub:
    """Deterministic, model-free noise predictor for tests and dry runs.

    Treats the Gaussian-blurred noisy image as the denoised estimate, so the
    implied noise is the high-pass residual rescaled by the schedule:

        eps_hat = (x_t - blur(x_t)) / sqrt(1 - abar_t)

    In expectation the resulting update direction is proportional to
    theta - blur(theta), so repeated steps genuinely smooth the image, which
    is all the downstream plumbing needs.
    """

    resolution = None

    def __init__(self, blur_sigma: float = 2.0):
        if blur_sigma <= 0:
            raise ValidationError("blur sigma must be positive")
        self.blur_sigma = float(blur_sigma)

    def embed(self, prompt: str) -> str:
        return prompt

    def predict(self, x_t: np.ndarray, t: int, embedding) -> np.ndarray:
        blurred = cv2.GaussianBlur(x_t, (0, 0), self.blur_sigma)
        return (x_t - blurred) / np.sqrt(1.0 - ALPHA_BAR[t])


class DiffusionBackend:
    """Noise predictor backed by a pretrained latent diffusion model.

    The UNet predicts noise in latent space; a pixel-space estimate is
    recovered through the standard clean-image route: the latent prediction
    gives z0_hat, the VAE decodes it, and the pixel noise follows from
    inverting the forward step around that decoded estimate,

        eps_pix = (x_t - sqrt(abar_t) * decode(z0_hat)) / sqrt(1 - abar_t).

    Requires torch and diffusers; weights are fetched on first use.
    """

    resolution = 512

    def __init__(self, model_id: str = "runwayml/stable-diffusion-v1-5",
                 device: str | None = None):
        try:
            import torch
            from diffusers import StableDiffusionPipeline
        except ImportError as exc:
            raise ModelUnavailableError(
                "the diffusion backend needs torch and diffusers; install the "
                "'models' extra (pip install 'sds-toolchain[models]')") from exc
        self._torch = torch
        self.device = device or ("cuda" if torch.cuda.is_available() else "cpu")
        try:
            pipe = StableDiffusionPipeline.from_pretrained(model_id)
        except Exception as exc:
            raise ModelUnavailableError(
                f"could not load diffusion weights '{model_id}': {exc}") from exc
        self.pipe = pipe.to(self.device)
        self.pipe.vae.eval()
        self.pipe.unet.eval()

    def embed(self, prompt: str):
        torch = self._torch
        tok = self.pipe.tokenizer(prompt, padding="max_length",
                                  max_length=self.pipe.tokenizer.model_max_length,
                                  truncation=True, return_tensors="pt")
        with torch.no_grad():
            return self.pipe.text_encoder(tok.input_ids.to(self.device))[0]

    def predict(self, x_t: np.ndarray, t: int, embedding) -> np.ndarray:
        torch = self._torch
        with torch.no_grad():
            px = torch.from_numpy(x_t.transpose(2, 0, 1)[None]).float().to(self.device)
            z_t = self.pipe.vae.encode(px * 2.0 - 1.0).latent_dist.mean
            z_t = z_t * self.pipe.vae.config.scaling_factor
            ts = torch.tensor([t], device=self.device)
            eps_z = self.pipe.unet(z_t, ts, encoder_hidden_states=embedding).sample
            ab = float(ALPHA_BAR[t])
            z0 = (z_t - np.sqrt(1.0 - ab) * eps_z) / np.sqrt(ab)
            x0 = self.pipe.vae.decode(z0 / self.pipe.vae.config.scaling_factor).sample
            x0 = ((x0 + 1.0) / 2.0).clamp(0.0, 1.0)
            x0 = x0[0].cpu().numpy().transpose(1, 2, 0).astype(np.float64)
        return (x_t - np.sqrt(ab) * x0) / np.sqrt(1.0 - ab)


def _resize(img: np.ndarray, width: int, height: int) -> np.ndarray:
    if img.shape[1] == width and img.shape[0] == height:
        return img
    interp = cv2.INTER_AREA if width < img.shape[1] else cv2.INTER_LINEAR
    return np.clip(cv2.resize(img, (width, height), interpolation=interp), 0.0, 1.0)


def sds_simplify(image_path: str, cfg: SDSConfig, out_dir: str,
                 predictor=None) -> str:
    """Run the simplification loop and write the level files plus manifest.

    Returns the manifest path. Level 0 is written from the unmodified input
    pixels before any optimization step; later levels are snapshots taken
    every `cfg.snapshot_interval` iterations.
    """
    if predictor is None:
        predictor = DiffusionBackend()
    source = load_rgb(image_path)
    h, w = source.shape[:2]
    os.makedirs(out_dir, exist_ok=True)

    save_rgb(os.path.join(out_dir, "level_0.png"), source)
    entries = [{"index": 0, "file": "level_0.png", "params": {}}]

    theta = source
    res = predictor.resolution
    if res is not None:
        theta = _resize(source, res, res)
    theta = theta.copy()

    cond = predictor.embed(cfg.prompt)
    uncond = predictor.embed("")
    rng = np.random.default_rng(cfg.seed)
    run_params = {"step_size": cfg.step_size, "t_min": cfg.t_min, "t_max": cfg.t_max,
                  "cfg_scale": cfg.cfg_scale, "mode": cfg.muting_mode, "seed": cfg.seed}

    for step in range(1, cfg.iterations + 1):
        t = int(rng.integers(cfg.t_min, cfg.t_max + 1))
        eps = rng.standard_normal(theta.shape)
        ab = ALPHA_BAR[t]
        x_t = np.sqrt(ab) * theta + np.sqrt(1.0 - ab) * eps
        e_cond = predictor.predict(x_t, t, cond)
        e_uncond = predictor.predict(x_t, t, uncond)
        e_hat = cfg_combine(e_cond, e_uncond, cfg.cfg_scale)
        theta = np.clip(theta - cfg.step_size * (1.0 - ab) * (e_hat - eps), 0.0, 1.0)
        if step % cfg.snapshot_interval == 0:
            k = step // cfg.snapshot_interval
            name = f"level_{k}.png"
            save_rgb(os.path.join(out_dir, name), _resize(theta, w, h))
            entries.append({"index": k, "file": name,
                            "params": dict(run_params, sds_step=step)})

    manifest = {"original": "level_0.png", "method": "sds", "levels": entries}
    path = os.path.join(out_dir, MANIFEST_NAME)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    return path
