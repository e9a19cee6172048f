import pytest
import torch

from styletrainer.model import (
    ByteTokenizer,
    ModelConfig,
    TinyCausalLM,
    VOCAB_SIZE,
    load_base_model,
)


class TestTokenizer:
    def test_round_trip(self):
        tok = ByteTokenizer()
        text = "hello, wörld! :)"
        assert tok.decode(tok.encode(text)) == text

    def test_byte_ids_in_range(self):
        ids = ByteTokenizer().encode("any text 123")
        assert all(0 <= i < 256 for i in ids)


class TestBaseModel:
    def test_same_id_same_weights(self):
        a = load_base_model("base-lm")
        b = load_base_model("base-lm")
        for (ka, ta), (kb, tb) in zip(a.state_dict().items(), b.state_dict().items()):
            assert ka == kb
            assert torch.equal(ta, tb)

    def test_different_id_different_weights(self):
        a = load_base_model("base-lm")
        b = load_base_model("other-lm")
        assert not torch.equal(a.tok_emb.weight, b.tok_emb.weight)

    def test_ambient_rng_unaffected(self):
        torch.manual_seed(123)
        before = torch.rand(4)
        torch.manual_seed(123)
        load_base_model("base-lm")
        after = torch.rand(4)
        assert torch.equal(before, after)

    def test_forward_shape(self):
        model = TinyCausalLM(ModelConfig(max_context=32))
        out = model(torch.zeros(2, 10, dtype=torch.long))
        assert out.shape == (2, 10, VOCAB_SIZE)

    def test_context_bound_enforced(self):
        model = TinyCausalLM(ModelConfig(max_context=8))
        with pytest.raises(ValueError):
            model(torch.zeros(1, 9, dtype=torch.long))

    def test_causal_masking(self):
        # a suffix change must not alter logits at earlier positions
        model = load_base_model("base-lm")
        a = torch.tensor([[1, 2, 3, 4]])
        b = torch.tensor([[1, 2, 3, 9]])
        with torch.no_grad():
            la, lb = model(a), model(b)
        assert torch.allclose(la[0, :3], lb[0, :3], atol=1e-6)
        assert not torch.allclose(la[0, 3], lb[0, 3], atol=1e-6)
