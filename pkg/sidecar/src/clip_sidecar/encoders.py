"""Scoring backends.

Three implementations of one interface, `score(pixels, prompt, need_grad)
-> (loss, grad | None)`: the echo critic (a test double whose loss is the
mean pixel value), a tiny deterministic dual encoder used for integration
tests without model weights, and a wrapper around a real pretrained
image-text encoder when torch is installed.
"""

from __future__ import annotations

import re
import zlib

import numpy as np

EMBED_DIM = 64
POOL_GRID = 8

# Gains keep the color channels of the embedding comparable to the texture
# projection so that color words in a prompt actually order images by color.
COLOR_GAIN = 2.0
TEXTURE_GAIN = 0.05
TEXT_COLOR_GAIN = 4.0
TEXT_TRIGRAM_GAIN = 0.25

COLOR_WORDS = {
    "red": (1.0, 0.0, 0.0),
    "green": (0.0, 1.0, 0.0),
    "blue": (0.0, 0.0, 1.0),
    "yellow": (1.0, 1.0, 0.0),
    "magenta": (1.0, 0.0, 1.0),
    "cyan": (0.0, 1.0, 1.0),
    "white": (1.0, 1.0, 1.0),
}


class EncoderUnavailable(Exception):
    """The configured model could not be loaded."""


class EchoCritic:
    """loss = mean pixel value, gradient = 1/(H*W*3) everywhere."""

    name = "echo"
    requires_prompt = False

    def score(self, pixels: np.ndarray, prompt: str, need_grad: bool):
        loss = float(pixels.mean())
        if not need_grad:
            return loss, None
        return loss, np.full(pixels.shape, 1.0 / pixels.size)


def _pool_bins(size: int, grid: int) -> list[tuple[int, int]]:
    return [((b * size) // grid, ((b + 1) * size) // grid) for b in range(grid)]


class TinyDualEncoder:
    """Deterministic linear dual encoder, no weights file needed.

    Image branch: mean-pool to an 8x8 grid, channel-normalize, project with
    a fixed seeded matrix; the first three embedding dims carry the raw
    channel means so color words ground without any training.  Text branch:
    a small color lexicon plus hashed character trigrams.  Both embeddings
    are L2-normalized and the loss is 1 - cosine, with the pixel gradient
    derived by hand through the (entirely linear) image branch.
    """

    requires_prompt = True

    def __init__(self, seed: int = 0, mean=(0.5, 0.5, 0.5), std=(0.25, 0.25, 0.25)):
        self.name = f"tiny-test(seed={seed})"
        rng = np.random.default_rng(seed)
        n = POOL_GRID * POOL_GRID * 3
        self.projection = rng.standard_normal((EMBED_DIM - 3, n)) / np.sqrt(n)
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)

    def embed_text(self, prompt: str) -> np.ndarray:
        tokens = re.findall(r"[a-z]+", prompt.lower())
        color = np.zeros(3)
        hits = [COLOR_WORDS[t] for t in tokens if t in COLOR_WORDS]
        if hits:
            color = np.mean(hits, axis=0)
        rest = np.zeros(EMBED_DIM - 3)
        joined = " ".join(tokens)
        for i in range(len(joined) - 2):
            h = zlib.crc32(joined[i : i + 3].encode("utf-8"))
            rest[h % (EMBED_DIM - 3)] += 1.0 if (h >> 16) % 2 == 0 else -1.0
        e = np.concatenate([TEXT_COLOR_GAIN * color, TEXT_TRIGRAM_GAIN * rest])
        norm = float(np.linalg.norm(e))
        if norm < 1e-9:  # no color word and no trigram landed: fixed direction
            e = np.zeros(EMBED_DIM)
            e[3] = 1.0
            norm = 1.0
        return e / norm

    def _embed_image(self, pixels: np.ndarray):
        h, w = pixels.shape[:2]
        rows = _pool_bins(h, POOL_GRID)
        cols = _pool_bins(w, POOL_GRID)
        pooled = np.empty((POOL_GRID, POOL_GRID, 3))
        for bi, (r0, r1) in enumerate(rows):
            for bj, (c0, c1) in enumerate(cols):
                pooled[bi, bj] = pixels[r0:r1, c0:c1].mean(axis=(0, 1))
        flat = ((pooled - self.mean) / self.std).reshape(-1)
        z = np.concatenate(
            [COLOR_GAIN * pixels.mean(axis=(0, 1)), TEXTURE_GAIN * (self.projection @ flat)]
        )
        return z, rows, cols

    def score(self, pixels: np.ndarray, prompt: str, need_grad: bool):
        h, w = pixels.shape[:2]
        if h < POOL_GRID or w < POOL_GRID:
            raise ValueError(f"image {w}x{h} smaller than the {POOL_GRID}px pooling grid")
        t = self.embed_text(prompt)
        z, rows, cols = self._embed_image(pixels)
        zn = float(np.linalg.norm(z))
        u = z / zn
        cos = float(u @ t)
        loss = 1.0 - cos
        if not need_grad:
            return loss, None

        dz = -(t - cos * u) / zn  # d(1 - u.t)/dz through the normalization
        grad = np.zeros_like(pixels)
        grad += COLOR_GAIN * dz[:3] / (h * w)
        dflat = TEXTURE_GAIN * (self.projection.T @ dz[3:])
        dpooled = dflat.reshape(POOL_GRID, POOL_GRID, 3) / self.std
        for bi, (r0, r1) in enumerate(rows):
            for bj, (c0, c1) in enumerate(cols):
                grad[r0:r1, c0:c1] += dpooled[bi, bj] / ((r1 - r0) * (c1 - c0))
        return loss, grad


class TorchImageTextEncoder:
    """A real pretrained dual encoder; gradients come from autograd.

    Optional: importing torch/open_clip happens here so the rest of the
    sidecar (and the echo/tiny paths) work without them installed.
    """

    requires_prompt = True

    def __init__(self, model_name: str, device: str = "cpu"):
        try:
            import open_clip
            import torch
        except ImportError as exc:
            raise EncoderUnavailable(f"torch/open_clip not installed: {exc}") from exc
        self.name = model_name
        self.torch = torch
        self.device = device
        try:
            model, _, _ = open_clip.create_model_and_transforms(model_name)
            self.tokenizer = open_clip.get_tokenizer(model_name)
        except Exception as exc:
            raise EncoderUnavailable(f"cannot load {model_name!r}: {exc}") from exc
        self.model = model.eval().to(device)
        self.input_size = model.visual.image_size
        if isinstance(self.input_size, (tuple, list)):
            self.input_size = self.input_size[0]
        # standard channel statistics of the pretraining pipeline
        self.norm_mean = torch.tensor([0.48145466, 0.4578275, 0.40821073], device=device)
        self.norm_std = torch.tensor([0.26862954, 0.26130258, 0.27577711], device=device)

    def score(self, pixels: np.ndarray, prompt: str, need_grad: bool):
        torch = self.torch
        x = torch.tensor(pixels, dtype=torch.float32, device=self.device, requires_grad=need_grad)
        # resize + normalization stay inside the graph so the returned
        # gradient is w.r.t. the caller's pixel grid
        img = x.permute(2, 0, 1).unsqueeze(0)
        img = torch.nn.functional.interpolate(
            img, size=(self.input_size, self.input_size), mode="bilinear", align_corners=False
        )
        img = (img - self.norm_mean.view(1, 3, 1, 1)) / self.norm_std.view(1, 3, 1, 1)
        with torch.set_grad_enabled(need_grad):
            image_emb = self.model.encode_image(img)
            image_emb = image_emb / image_emb.norm(dim=-1, keepdim=True)
            tokens = self.tokenizer([prompt]).to(self.device)
            with torch.no_grad():
                text_emb = self.model.encode_text(tokens)
                text_emb = text_emb / text_emb.norm(dim=-1, keepdim=True)
            loss = 1.0 - (image_emb * text_emb).sum()
        if not need_grad:
            return float(loss.item()), None
        loss.backward()
        return float(loss.item()), x.grad.detach().cpu().numpy().astype(np.float64)


def load_encoder(model_name: str, device: str = "cpu"):
    if model_name == "echo":
        return EchoCritic()
    if model_name.startswith("tiny-test"):
        return TinyDualEncoder()
    return TorchImageTextEncoder(model_name, device)
