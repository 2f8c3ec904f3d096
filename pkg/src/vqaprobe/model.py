"""The trained component: projects frozen text/visual tokens into a shared
space, runs a transformer encoder-decoder, and emits four answer heads
(type, binary, count, attribute) with a masked four-term loss.

Only this module's parameters ever receive gradients; text embeddings,
visual tokens, and PCA stay outside the tape.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Tensor
from .errors import ConfigError, DataError
from .seeding import substream

ANSWER_TYPE_ORDER = ("binary", "count", "attribute")
N_TYPES = 3
N_COUNTS = 11  # answers 0..10
N_ATTRIBUTES = 15


@dataclass(frozen=True)
class ReasoningConfig:
    d_model: int = 128
    encoder_layers: int = 3
    decoder_layers: int = 3
    heads: int = 4
    ffn_dim: int = 512
    queries: int = 1
    dropout: float = 0.1
    max_text_len: int = 32
    max_grid: int = 4
    positional_objects: bool = False  # grid-style positions for object tokens

    def __post_init__(self):
        if self.d_model % self.heads != 0:
            raise ConfigError(f"d_model {self.d_model} not divisible by {self.heads} heads")
        if self.queries < 1:
            raise ConfigError("need at least one decoder query")


@dataclass
class PredictionBundle:
    type_logits: Tensor  # [B, 3]
    binary_logit: Tensor  # [B]
    count_logits: Tensor  # [B, 11]
    attribute_logits: Tensor  # [B, 15]


@dataclass
class LossBundle:
    l_type: float
    l_binary: float
    l_count: float
    l_attribute: float
    total: Tensor

    @property
    def total_value(self) -> float:
        return self.total.item()


def _uniform_init(rng, fan_in: int, shape) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(np.float32)


class ReasoningModule:
    def __init__(self, config: ReasoningConfig, d_text: int, d_visual: int, seed: int = 0):
        self.config = config
        self.d_text = d_text
        self.d_visual = d_visual
        self.params: dict[str, Tensor] = {}
        rng = substream(seed, "model-init")
        dm = config.d_model

        def linear(name, fan_in, fan_out):
            self._add(name + "/W", _uniform_init(rng, fan_in, (fan_in, fan_out)))
            self._add(name + "/b", np.zeros(fan_out, dtype=np.float32))

        def table(name, shape):
            self._add(name, (rng.standard_normal(shape) * 0.02).astype(np.float32))

        linear("proj_text", d_text, dm)
        linear("proj_vis", d_visual, dm)
        table("segment_text", (dm,))
        table("segment_visual", (dm,))
        table("pos_text", (config.max_text_len, dm))
        table("pos_grid", (config.max_grid * config.max_grid, dm))
        table("queries", (config.queries, dm))
        for i in range(config.encoder_layers):
            self._attention_block(linear, f"enc{i}/attn", dm)
            self._ln(f"enc{i}/ln1", dm)
            linear(f"enc{i}/ffn1", dm, config.ffn_dim)
            linear(f"enc{i}/ffn2", config.ffn_dim, dm)
            self._ln(f"enc{i}/ln2", dm)
        for i in range(config.decoder_layers):
            self._attention_block(linear, f"dec{i}/self", dm)
            self._ln(f"dec{i}/ln1", dm)
            self._attention_block(linear, f"dec{i}/cross", dm)
            self._ln(f"dec{i}/ln2", dm)
            linear(f"dec{i}/ffn1", dm, config.ffn_dim)
            linear(f"dec{i}/ffn2", config.ffn_dim, dm)
            self._ln(f"dec{i}/ln3", dm)
        linear("head_type", dm, N_TYPES)
        linear("head_binary", dm, 1)
        linear("head_count", dm, N_COUNTS)
        linear("head_attr", dm, N_ATTRIBUTES)

    def _add(self, name: str, data: np.ndarray) -> None:
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def _attention_block(self, linear, prefix: str, dm: int) -> None:
        for part in ("Wq", "Wk", "Wv", "Wo"):
            linear(f"{prefix}/{part}", dm, dm)

    def _ln(self, name: str, dm: int) -> None:
        self._add(name + "/g", np.ones(dm, dtype=np.float32))
        self._add(name + "/b", np.zeros(dm, dtype=np.float32))

    # --- building blocks ----------------------------------------------------

    def _linear(self, tape, x: Tensor, name: str) -> Tensor:
        return ad.add(tape, ad.matmul(tape, x, self.params[name + "/W"]), self.params[name + "/b"])

    def _split_heads(self, tape, x: Tensor) -> Tensor:
        b, n, dm = x.shape
        h = self.config.heads
        return ad.transpose(tape, ad.reshape(tape, x, (b, n, h, dm // h)), (0, 2, 1, 3))

    def _merge_heads(self, tape, x: Tensor) -> Tensor:
        b, h, n, dh = x.shape
        return ad.reshape(tape, ad.transpose(tape, x, (0, 2, 1, 3)), (b, n, h * dh))

    def _mha(self, tape, prefix: str, x_q: Tensor, x_kv: Tensor, key_mask: np.ndarray | None) -> Tensor:
        q = self._split_heads(tape, self._linear(tape, x_q, f"{prefix}/Wq"))
        k = self._split_heads(tape, self._linear(tape, x_kv, f"{prefix}/Wk"))
        v = self._split_heads(tape, self._linear(tape, x_kv, f"{prefix}/Wv"))
        additive = None
        if key_mask is not None:
            additive = np.where(key_mask, 0.0, ad.NEG_INF).astype(np.float32)[:, None, None, :]
        out = ad.scaled_dot_attention(tape, q, k, v, mask=additive)
        return self._linear(tape, self._merge_heads(tape, out), f"{prefix}/Wo")

    def _drop(self, tape, x: Tensor, training: bool, rng) -> Tensor:
        if training and self.config.dropout > 0.0:
            return ad.dropout(tape, x, self.config.dropout, rng)
        return x

    def _sublayer(self, tape, x: Tensor, out: Tensor, ln: str, training: bool, rng) -> Tensor:
        return ad.layer_norm(
            tape, ad.add(tape, x, self._drop(tape, out, training, rng)),
            self.params[ln + "/g"], self.params[ln + "/b"],
        )

    def _ffn(self, tape, prefix: str, x: Tensor) -> Tensor:
        return self._linear(tape, ad.relu(tape, self._linear(tape, x, f"{prefix}/ffn1")), f"{prefix}/ffn2")

    # --- public surface -------------------------------------------------------

    def project_inputs(
        self,
        tape,
        text_emb: np.ndarray,  # [B, T, d_text], frozen
        text_mask: np.ndarray,  # [B, T] bool
        visual: np.ndarray,  # [B, N_v, d_visual], frozen
        visual_valid: np.ndarray | None = None,  # [B, N_v] bool
        grid_ids: np.ndarray | None = None,  # [N_v] indices into pos_grid
    ) -> tuple[Tensor, np.ndarray]:
        """Fuse both modalities into one masked token sequence."""
        if text_emb.shape[-1] != self.d_text:
            raise DataError(f"text dim {text_emb.shape[-1]} != configured {self.d_text}")
        if visual.shape[-1] != self.d_visual:
            raise DataError(f"visual dim {visual.shape[-1]} != configured {self.d_visual}")
        b, t, _ = text_emb.shape
        n_v = visual.shape[1]
        if t > self.config.max_text_len:
            raise DataError(f"text length {t} exceeds max_text_len {self.config.max_text_len}")
        tq = self._linear(tape, Tensor(text_emb), "proj_text")
        tq = ad.add(tape, tq, self.params["segment_text"])
        tq = ad.add(tape, tq, ad.slice_axis(tape, self.params["pos_text"], 0, 0, t))
        vv = self._linear(tape, Tensor(visual), "proj_vis")
        vv = ad.add(tape, vv, self.params["segment_visual"])
        if grid_ids is not None:
            vv = ad.add(tape, vv, ad.embedding_lookup(tape, self.params["pos_grid"], grid_ids))
        fused = ad.concat(tape, [tq, vv], axis=1)
        if visual_valid is None:
            visual_valid = np.ones((b, n_v), dtype=bool)
        mask = np.concatenate([text_mask.astype(bool), visual_valid.astype(bool)], axis=1)
        return fused, mask

    def forward(
        self,
        tape,
        fused: Tensor,
        mask: np.ndarray,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> PredictionBundle:
        cfg = self.config
        x = fused
        for i in range(cfg.encoder_layers):
            attn = self._mha(tape, f"enc{i}/attn", x, x, mask)
            x = self._sublayer(tape, x, attn, f"enc{i}/ln1", training, rng)
            x = self._sublayer(tape, x, self._ffn(tape, f"enc{i}", x), f"enc{i}/ln2", training, rng)
        b = fused.shape[0]
        queries = ad.reshape(tape, self.params["queries"], (1, cfg.queries, cfg.d_model))
        zeros = Tensor(np.zeros((b, cfg.queries, cfg.d_model), dtype=np.float32))
        y = ad.add(tape, queries, zeros)
        for i in range(cfg.decoder_layers):
            attn = self._mha(tape, f"dec{i}/self", y, y, None)
            y = self._sublayer(tape, y, attn, f"dec{i}/ln1", training, rng)
            cross = self._mha(tape, f"dec{i}/cross", y, x, mask)
            y = self._sublayer(tape, y, cross, f"dec{i}/ln2", training, rng)
            y = self._sublayer(tape, y, self._ffn(tape, f"dec{i}", y), f"dec{i}/ln3", training, rng)
        head_in = ad.reshape(tape, ad.slice_axis(tape, y, 1, 0, 1), (b, cfg.d_model))
        return PredictionBundle(
            type_logits=self._linear(tape, head_in, "head_type"),
            binary_logit=ad.reshape(tape, self._linear(tape, head_in, "head_binary"), (b,)),
            count_logits=self._linear(tape, head_in, "head_count"),
            attribute_logits=self._linear(tape, head_in, "head_attr"),
        )

    def compute_loss(self, tape, bundle: PredictionBundle, y_type: np.ndarray, y_value: np.ndarray) -> LossBundle:
        """Type loss plus the one answer-head loss matching each sample's true
        type; heads with no matching samples contribute exactly zero."""
        y_type = np.asarray(y_type, dtype=np.int64)
        y_value = np.asarray(y_value, dtype=np.int64)
        if y_type.shape != y_value.shape or y_type.ndim != 1:
            raise DataError("y_type and y_value must be matching 1-d arrays")
        if y_type.size != bundle.type_logits.shape[0]:
            raise DataError("label count does not match batch size")
        total = ad.cross_entropy(tape, bundle.type_logits, y_type)
        parts = {"binary": 0.0, "count": 0.0, "attribute": 0.0}
        heads = {
            "binary": bundle.binary_logit,
            "count": bundle.count_logits,
            "attribute": bundle.attribute_logits,
        }
        l_type_value = total.item()
        for k, kind in enumerate(ANSWER_TYPE_ORDER):
            idx = np.nonzero(y_type == k)[0]
            if idx.size == 0:
                continue
            rows = ad.gather_rows(tape, heads[kind], idx)
            if kind == "binary":
                part = ad.bce_with_logits(tape, rows, y_value[idx].astype(np.float64))
            else:
                part = ad.cross_entropy(tape, rows, y_value[idx])
            parts[kind] = part.item()
            total = ad.add(tape, total, part)
        return LossBundle(
            l_type=l_type_value,
            l_binary=parts["binary"],
            l_count=parts["count"],
            l_attribute=parts["attribute"],
            total=total,
        )

    def state_dict(self) -> dict[str, Tensor]:
        return self.params

    def load_state(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise DataError(f"checkpoint mismatch: missing {sorted(missing)[:3]}, extra {sorted(extra)[:3]}")
        for name, arr in arrays.items():
            if self.params[name].data.shape != arr.shape:
                raise DataError(f"checkpoint shape mismatch for {name}")
            self.params[name].data = arr.astype(np.float32)


def predict_answer(bundle: PredictionBundle) -> list[tuple[int, int]]:
    """Route each sample through argmax of the type head.

    Ties break to the smallest index; a binary logit of exactly 0 means
    'no' (strict > 0 for 'yes').
    """
    types = np.argmax(bundle.type_logits.data, axis=1)
    binary = (bundle.binary_logit.data > 0).astype(int)
    counts = np.argmax(bundle.count_logits.data, axis=1)
    attrs = np.argmax(bundle.attribute_logits.data, axis=1)
    out = []
    for i, t in enumerate(types):
        value = (binary[i], counts[i], attrs[i])[t]
        out.append((int(t), int(value)))
    return out
