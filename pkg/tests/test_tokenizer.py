import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lowres import tokenizer
from lowres.corpus import Document
from lowres.tokenizer import (
    ExtensionVocab,
    TokenizerModel,
    VocabularyError,
    compression_report,
    merge,
    new_base_vocabulary,
    piece_from_str,
    piece_to_str,
    train_extension,
)

marker_free_text = st.text(
    alphabet=st.characters(blacklist_characters="▁", blacklist_categories=("Cs",)),
    max_size=60,
)


class TestEncode:
    def test_single_longest_match(self, fixture_model):
        ids = fixture_model.encode("Hi")
        assert len(ids) == 1
        assert fixture_model.vocab.pieces[ids[0]] == "▁Hi".encode()

    def test_ethiopic_byte_fallback(self, fixture_model):
        ids = fixture_model.encode("ሰ")
        assert len(ids) == 4
        lo = fixture_model.vocab.byte_start
        assert fixture_model.vocab.pieces[ids[0]] == "▁".encode()
        assert [t - lo for t in ids[1:]] == [0xE1, 0x88, 0xB0]

    def test_reference_sentence_token_count(self, fixture_model):
        # 3 word markers + 30 Ethiopic bytes + 1 ASCII byte.
        assert len(fixture_model.encode("ሰላም፣ እንዴት ነህ?")) == 34

    def test_empty(self, fixture_model):
        assert fixture_model.encode("") == []

    def test_marker_rejected(self, fixture_model):
        with pytest.raises(ValueError, match="reserved marker"):
            fixture_model.encode("a▁b")

    def test_never_emits_special_ids(self, fixture_model):
        ids = fixture_model.encode("<unk> <s> </s>")
        specials = fixture_model.vocab.special_ids
        assert not specials.intersection(ids)


class TestDecode:
    def test_roundtrip(self, fixture_model):
        text = "Hi, how are you?"
        assert fixture_model.decode(fixture_model.encode(text)) == text

    def test_empty(self, fixture_model):
        assert fixture_model.decode([]) == ""

    def test_byte_reassembly(self, fixture_model):
        assert fixture_model.decode(fixture_model.encode("ሰ")) == "ሰ"

    def test_out_of_range(self, fixture_model):
        with pytest.raises(ValueError, match="out of range"):
            fixture_model.decode([len(fixture_model.vocab)])

    def test_invalid_utf8(self, fixture_model):
        lo = fixture_model.vocab.byte_start
        with pytest.raises(ValueError, match="invalid UTF-8"):
            fixture_model.decode([lo + 0xE1, lo + 0x41])

    @given(marker_free_text)
    @settings(max_examples=300)
    def test_roundtrip_fuzz(self, text):
        model = TokenizerModel(new_base_vocabulary(["▁", "▁Hi"]))
        assert model.decode(model.encode(text)) == text


class TestTrainExtension:
    def test_hand_traced_merges(self):
        # "ሰሰ" is E1 88 B0 twice; with the marker prefix the pair-merge
        # order is (88,B0), then (E1,88B0), then ties resolved toward
        # the lexicographically smallest left symbol.
        docs = [Document("d", "real", "ሰሰ")] * 100
        ext = train_extension(docs, target_size=4, min_pair_freq=2)
        assert ext.pieces[0] == b"\x88\xb0"
        assert ext.pieces[1] == "ሰ".encode()
        assert ext.pieces[2] == b"\x81" + "ሰ".encode()
        assert ext.pieces[3] == b"\x81" + "ሰሰ".encode()

    def test_pure_ascii_corpus_yields_empty_extension(self):
        docs = [Document("d", "real", "the quick brown fox " * 50)]
        ext = train_extension(docs, target_size=100, min_pair_freq=2)
        assert len(ext) == 0

    def test_empty_corpus_rejected(self):
        with pytest.raises(ValueError, match="empty corpus"):
            train_extension([], target_size=4)

    def test_zero_target_rejected(self):
        with pytest.raises(ValueError, match="target_size"):
            train_extension([Document("d", "real", "ሰ")], target_size=0)

    def test_deterministic(self):
        rng = random.Random(7)
        words = ["".join(chr(rng.randrange(0x1200, 0x12E0)) for _ in range(3))
                 for _ in range(40)]
        text = " ".join(rng.choice(words) for _ in range(500))
        docs = [Document("d", "real", text)]
        a = train_extension(docs, target_size=64, min_pair_freq=2)
        b = train_extension(docs, target_size=64, min_pair_freq=2)
        assert a.pieces == b.pieces

    def test_min_pair_freq_stops_training(self):
        docs = [Document("d", "real", "ሰ")]
        ext = train_extension(docs, target_size=100, min_pair_freq=2)
        assert len(ext) == 0  # every pair occurs once


class TestExtensionVocab:
    def test_rejects_ascii_piece(self):
        with pytest.raises(VocabularyError, match="pure-ASCII"):
            ExtensionVocab((b"hi",))

    def test_rejects_duplicates(self):
        with pytest.raises(VocabularyError, match="duplicate"):
            ExtensionVocab(("ሰ".encode(), "ሰ".encode()))


class TestMerge:
    def test_sizes_add_when_disjoint(self, byte_base):
        ext = ExtensionVocab(tuple(chr(cp).encode() for cp in range(0x1200, 0x1232)))
        model = merge(byte_base, ext)
        assert len(model) == len(byte_base) + 50
        assert model.base_size == len(byte_base)

    def test_collision_dropped(self, byte_base):
        marker = "▁".encode()
        assert marker in byte_base.pieces
        model = merge(byte_base, ExtensionVocab((marker,)))
        assert len(model) == len(byte_base)

    def test_empty_extension_is_identity(self, byte_base):
        model = merge(byte_base, ExtensionVocab(()))
        base_model = TokenizerModel(byte_base)
        text = "ሰላም hello"
        assert model.encode(text) == base_model.encode(text)

    def test_base_ids_stable(self, byte_base):
        ext = ExtensionVocab(("ሰላ".encode(),))
        model = merge(byte_base, ext)
        for i, piece in enumerate(byte_base.pieces):
            assert model.vocab.pieces[i] == piece

    def test_merged_encodes_shorter(self, byte_base):
        ext = ExtensionVocab(("ሰ".encode(), "ሰሰ".encode()))
        merged = merge(byte_base, ext)
        base_model = TokenizerModel(byte_base)
        text = "ሰሰ ሰሰ"
        assert len(merged.encode(text)) < len(base_model.encode(text))
        assert merged.decode(merged.encode(text)) == text

    @given(st.text(alphabet=st.characters(codec="ascii"), max_size=50))
    @settings(max_examples=200)
    def test_english_invariance(self, text):
        base = new_base_vocabulary()
        ext = ExtensionVocab(("ሰ".encode(), ("▁" + "ሰላ").encode(), b"\x88\xb0"))
        merged = merge(base, ext)
        base_model = TokenizerModel(base)
        assert merged.encode(text) == base_model.encode(text)


class TestCompressionReport:
    def test_identity_ratio(self, byte_model):
        docs = [Document("d", "real", "ሰላም ዓለም")]
        rep = compression_report(byte_model, byte_model, docs)
        assert rep["ratio"] == 1.0
        assert rep["tokens_a"] == rep["tokens_b"]

    def test_merged_wins_on_ethiopic(self, byte_base, byte_model):
        ext = ExtensionVocab((b"\x88\xb0", "ሰ".encode(), "ሰሰ".encode(),
                              ("▁" + "ሰሰ").encode()))
        merged = merge(byte_base, ext)
        docs = [Document("d", "real", "ሰሰ ሰሰ ሰሰ")]
        rep = compression_report(byte_model, merged, docs)
        assert rep["ratio"] > 2

    def test_empty_corpus_rejected(self, byte_model):
        with pytest.raises(ValueError, match="empty corpus"):
            compression_report(byte_model, byte_model, [])

    def test_zero_tokens_under_b(self, byte_model):
        docs = [Document("d", "real", "")]
        with pytest.raises(ValueError, match="zero tokens"):
            compression_report(byte_model, byte_model, docs)


class TestSerialization:
    def test_piece_str_roundtrip(self):
        for piece in (b"hello", "▁Hi".encode(), b"\xe1\x88", b"\x00",
                      b"<0x41>literal"):
            assert piece_from_str(piece_to_str(piece)) == piece

    def test_model_file_roundtrip(self, tmp_path, byte_base):
        ext = ExtensionVocab(("ሰ".encode(), b"\x88\xb0"))
        model = merge(byte_base, ext)
        path = tmp_path / "model.json"
        tokenizer.save_model(model, path)
        loaded = tokenizer.load_model(path)
        assert loaded.vocab.pieces == model.vocab.pieces
        assert loaded.base_size == model.base_size
        text = "ሰላም world"
        assert loaded.encode(text) == model.encode(text)

    def test_builtin_byte_model(self):
        model = tokenizer.load_model("builtin:byte")
        assert model.decode(model.encode("hello there")) == "hello there"

    def test_extension_file_roundtrip(self, tmp_path):
        ext = ExtensionVocab(("ሰ".encode(), b"\x88\xb0"))
        path = tmp_path / "ext.json"
        tokenizer.save_extension(ext, path)
        assert tokenizer.load_extension(path).pieces == ext.pieces
