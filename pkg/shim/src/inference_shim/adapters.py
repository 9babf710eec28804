"""Model adapters behind the three serving roles.

Transformers-backed adapters load the real frozen checkpoints; stub
adapters produce deterministic hash-derived outputs so the protocol layer
can be validated on machines without model weights or network access.
"""

import hashlib
import math

import numpy as np

from .config import ShimConfig

_WORDS = (
    "motocross", "frisbee", "umbrella", "mustard", "surfing", "train",
    "giraffe", "pizza", "clock", "winter", "engine", "tennis", "harbor",
    "bridge", "compass", "anchor", "lantern", "marble", "cotton", "breeze",
)


class AdapterError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# deterministic stubs

def _digest(seed: int, *parts: str) -> bytes:
    h = hashlib.blake2b(digest_size=32)
    h.update(str(seed).encode())
    for p in parts:
        h.update(b"\x00")
        h.update(p.encode("utf-8", "surrogatepass"))
    return h.digest()


def _floats(seed: int, n: int, *parts: str) -> list[float]:
    out = []
    counter = 0
    while len(out) < n:
        block = _digest(seed, *parts, str(counter))
        for i in range(0, 32, 8):
            if len(out) >= n:
                break
            u = int.from_bytes(block[i : i + 8], "big") / float(1 << 64)
            out.append(2.0 * u - 1.0)
        counter += 1
    return out


def _word(seed: int, *parts: str) -> str:
    idx = int.from_bytes(_digest(seed, *parts)[:8], "big") % len(_WORDS)
    return _WORDS[idx]


class StubEmbedder:
    def __init__(self, dim: int = 384, seed: int = 0):
        self.dim = dim
        self.seed = seed
        self.model_name = "stub-embedder"

    def embed(self, text: str) -> np.ndarray:
        v = np.array(_floats(self.seed, self.dim, "embed", text), dtype=np.float64)
        norm = float(np.linalg.norm(v))
        if norm == 0.0:
            v[0] = 1.0
            norm = 1.0
        return v / norm


class StubVision:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.model_name = "stub-vision"

    def answer(self, image: np.ndarray, question: str, rows: int, cols: int):
        ikey = hashlib.blake2b(image.tobytes(), digest_size=8).hexdigest()
        gkey = f"{rows}x{cols}"
        draft = _word(self.seed, "draft", question, ikey, gkey)
        caption = "a photo of {} near {}".format(
            _word(self.seed, "cap1", ikey), _word(self.seed, "cap2", ikey, gkey)
        )
        names = []
        i = 0
        while len(names) < 4:
            w = _word(self.seed, "alt", question, str(i))
            if w not in names:
                names.append(w)
            i += 1
        if draft not in names:
            names[0] = draft
        raw = _floats(self.seed, len(names), "dist", question, ikey, gkey)
        weights = [math.exp(2.0 * r) for r in raw]
        total = math.fsum(weights)
        dist = sorted(
            ((n, w / total) for n, w in zip(names, weights)),
            key=lambda p: (-p[1], p[0]),
        )
        return dist[0][0], caption, dist


class StubGenerator:
    def __init__(self, seed: int = 0):
        self.seed = seed
        self.model_name = "stub-generator"

    def generate(self, prompt: str, max_tokens: int):
        n = 1 + int.from_bytes(_digest(self.seed, "len", prompt)[:2], "big") % min(max_tokens, 4)
        tokens = [_word(self.seed, "tok", prompt, str(i)) for i in range(n)]
        return " ".join(tokens), self.score(prompt, " ".join(tokens))

    def score(self, prompt: str, completion: str) -> list[float]:
        out = []
        for i, tok in enumerate(completion.split()):
            u = (int.from_bytes(_digest(self.seed, "lp", prompt, tok, str(i))[:8], "big")
                 / float(1 << 64))
            out.append(-(0.05 + 2.0 * u))
        return out


# ---------------------------------------------------------------------------
# transformers-backed adapters (frozen checkpoints, inference only)

class MiniLmEmbedder:
    def __init__(self, config: ShimConfig):
        from sentence_transformers import SentenceTransformer

        self.model_name = config.embedder_model
        self.dim = config.embedding_dim
        self._model = SentenceTransformer(config.embedder_model, device=config.device)
        self._model.eval()

    def embed(self, text: str) -> np.ndarray:
        v = self._model.encode([text], normalize_embeddings=True,
                               convert_to_numpy=True, show_progress_bar=False)[0]
        return np.asarray(v, dtype=np.float64)


class BlipVision:
    """Vision QA on a frozen checkpoint; the caption comes from a fixed
    descriptive query against the same model."""

    CAPTION_QUERY = "what is in the picture?"

    def __init__(self, config: ShimConfig):
        import torch
        from transformers import BlipForQuestionAnswering, BlipProcessor

        self.model_name = config.vision_model
        self.device = config.device
        self._torch = torch
        self._processor = BlipProcessor.from_pretrained(config.vision_model)
        self._model = BlipForQuestionAnswering.from_pretrained(config.vision_model)
        self._model.to(config.device)
        self._model.eval()

    def _ask(self, pil_image, question: str, num_answers: int = 1):
        torch = self._torch
        inputs = self._processor(pil_image, question, return_tensors="pt").to(self.device)
        with torch.no_grad():
            out = self._model.generate(
                **inputs,
                num_beams=max(4, num_answers),
                num_return_sequences=num_answers,
                max_new_tokens=10,
                output_scores=True,
                return_dict_in_generate=True,
            )
        texts = [
            self._processor.decode(seq, skip_special_tokens=True).strip()
            for seq in out.sequences
        ]
        scores = out.sequences_scores.tolist() if out.sequences_scores is not None else [0.0]
        return texts, scores

    def answer(self, image: np.ndarray, question: str, rows: int, cols: int):
        from PIL import Image

        pil = Image.fromarray(image, mode="RGB")
        texts, scores = self._ask(pil, question, num_answers=4)
        # softmax over beam sequence scores
        m = max(scores)
        weights = [math.exp(s - m) for s in scores]
        total = math.fsum(weights)
        merged: dict[str, float] = {}
        for t, w in zip(texts, weights):
            merged[t] = merged.get(t, 0.0) + w / total
        dist = sorted(merged.items(), key=lambda p: (-p[1], p[0]))
        caption_texts, _ = self._ask(pil, self.CAPTION_QUERY, num_answers=1)
        return dist[0][0], caption_texts[0], dist


class GptNeoGenerator:
    """Greedy decoding on a frozen causal LM; scoring is teacher-forced."""

    def __init__(self, config: ShimConfig):
        import torch
        from transformers import AutoModelForCausalLM, AutoTokenizer

        self.model_name = config.generator_model
        self.device = config.device
        self._torch = torch
        self._tokenizer = AutoTokenizer.from_pretrained(config.generator_model)
        self._model = AutoModelForCausalLM.from_pretrained(config.generator_model)
        self._model.to(config.device)
        self._model.eval()

    def generate(self, prompt: str, max_tokens: int):
        torch = self._torch
        inputs = self._tokenizer(prompt, return_tensors="pt").to(self.device)
        with torch.no_grad():
            out = self._model.generate(
                **inputs,
                do_sample=False,  # greedy decoding, enforced server-side
                max_new_tokens=max_tokens,
                output_scores=True,
                return_dict_in_generate=True,
                pad_token_id=self._tokenizer.eos_token_id,
            )
        new_tokens = out.sequences[0][inputs["input_ids"].shape[1]:]
        logprobs = []
        for step, token_id in enumerate(new_tokens):
            step_logits = out.scores[step][0]
            lp = torch.log_softmax(step_logits, dim=-1)[token_id]
            logprobs.append(float(lp))
        text = self._tokenizer.decode(new_tokens, skip_special_tokens=True).strip()
        return text, logprobs

    def score(self, prompt: str, completion: str) -> list[float]:
        torch = self._torch
        prompt_ids = self._tokenizer(prompt, return_tensors="pt")["input_ids"][0]
        completion_ids = self._tokenizer(" " + completion, return_tensors="pt")["input_ids"][0]
        ids = torch.cat([prompt_ids, completion_ids]).unsqueeze(0).to(self.device)
        with torch.no_grad():
            logits = self._model(ids).logits[0]
        logprobs = []
        offset = len(prompt_ids)
        for i, token_id in enumerate(completion_ids):
            lp = torch.log_softmax(logits[offset + i - 1], dim=-1)[token_id]
            logprobs.append(float(lp))
        return logprobs


def build_adapters(config: ShimConfig):
    """Instantiate the three adapters for the configured mode."""
    if config.adapter_mode == "stub":
        return (
            StubVision(config.stub_seed),
            StubGenerator(config.stub_seed),
            StubEmbedder(config.embedding_dim, config.stub_seed),
        )
    if config.adapter_mode != "transformers":
        raise AdapterError(f"unknown adapter mode {config.adapter_mode!r}")
    try:
        vision = BlipVision(config)
        generator = GptNeoGenerator(config)
        embedder = MiniLmEmbedder(config)
    except Exception as e:
        raise AdapterError(f"model load failed: {e}") from e
    return vision, generator, embedder
