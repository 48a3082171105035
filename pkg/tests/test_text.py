import pytest
from hypothesis import given
from hypothesis import strategies as st

from mpa.errors import FormatError, InvalidInput, MissingPronunciation
from mpa.text import (
    BOS, EOS, MASK, PAD, RESERVED, UNK,
    Lexicon, TokenSequence, Vocabulary, build_vocab, decode, encode, normalize_word, phonemize, phonemize_text,
)


class TestVocabulary:
    def test_reserved_ids(self):
        v = build_vocab(["a b"])
        assert [v.id(t) for t in RESERVED] == [PAD, UNK, BOS, EOS, MASK] == [0, 1, 2, 3, 4]

    def test_frequency_then_lexicographic(self):
        v = build_vocab(["b a c", "a c", "a"])
        assert v.tokens[5:] == ("a", "c", "b")

    def test_max_size_truncates(self):
        v = build_vocab(["z y x w"], max_size=7)
        assert len(v) == 7 and v.tokens[5:] == ("w", "x")

    def test_unknown_maps_to_unk(self):
        v = build_vocab(["hello world"])
        assert list(encode("hello there", v).ids) == [v.id("hello"), UNK]

    def test_normalization(self):
        assert normalize_word("Don't!") == "don't"
        v = build_vocab(["Hello, WORLD."])
        assert "hello" in v and "world" in v

    @pytest.mark.parametrize("corpus,size", [([], 100), (["a"], 5)])
    def test_invalid_builds(self, corpus, size):
        with pytest.raises(InvalidInput):
            build_vocab(corpus, max_size=size)

    def test_file_round_trip(self, tmp_path):
        v = build_vocab(["the cat sat on the mat"])
        v.save(tmp_path / "v.txt")
        assert Vocabulary.load(tmp_path / "v.txt") == v

    def test_file_without_reserved_prefix(self, tmp_path):
        (tmp_path / "v.txt").write_text("a\nb\n")
        with pytest.raises(FormatError):
            Vocabulary.load(tmp_path / "v.txt")


words = st.lists(st.sampled_from(["ba", "de", "gi", "ko", "lu"]), min_size=1, max_size=12)


@given(words)
def test_encode_decode_round_trip(ws):
    v = build_vocab(["ba de gi ko lu"])
    text = " ".join(ws)
    assert decode(encode(text, v), v) == text


class TestLexicon:
    LEX = "hello\tHH AH L OW\nworld\tW ER L D\nhello\tHH EH L OW\n"

    def test_first_pronunciation_wins(self, tmp_path):
        (tmp_path / "lex.tsv").write_text(self.LEX)
        lex = Lexicon.load(tmp_path / "lex.tsv")
        assert lex.lookup("Hello") == ("HH", "AH", "L", "OW")

    def test_phonemize(self, tmp_path):
        (tmp_path / "lex.tsv").write_text(self.LEX)
        lex = Lexicon.load(tmp_path / "lex.tsv")
        wv = build_vocab(["hello world"])
        pv = lex.phoneme_vocab()
        seq = phonemize(encode("hello world", wv), lex, wv, pv)
        assert seq.level == "phoneme"
        assert decode(seq, pv) == "HH AH L OW W ER L D"
        assert phonemize_text("Hello, world", lex) == "HH AH L OW W ER L D"

    def test_missing_word_names_it(self):
        lex = Lexicon({"a": ("AH",)})
        with pytest.raises(MissingPronunciation) as info:
            lex.lookup("zebra")
        assert info.value.word == "zebra"

    def test_unk_has_no_pronunciation(self):
        lex = Lexicon({"a": ("AH",)})
        wv = build_vocab(["a"])
        with pytest.raises(MissingPronunciation):
            phonemize(TokenSequence([UNK]), lex, wv, lex.phoneme_vocab())

    def test_malformed_line(self, tmp_path):
        (tmp_path / "lex.tsv").write_text("hello HH AH\n")
        with pytest.raises(FormatError):
            Lexicon.load(tmp_path / "lex.tsv")

    def test_save_load(self, tmp_path):
        lex = Lexicon({"a": ("AH",), "b": ("B", "IY")})
        lex.save(tmp_path / "l.tsv")
        assert Lexicon.load(tmp_path / "l.tsv") == lex
