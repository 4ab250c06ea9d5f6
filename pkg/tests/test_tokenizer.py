import pytest

from mlmforge.corpus import CorpusStats, SentenceCorpus
from mlmforge.errors import ConfigError, DataError
from mlmforge.tokenizer import (
    CLS_ID,
    MASK_ID,
    PAD_ID,
    SEP_ID,
    SPECIAL_TOKENS,
    UNK_ID,
    Vocab,
    decode,
    encode,
    normalize,
    pretokenize,
    train_vocab,
)


def corpus_of(*sentences):
    return SentenceCorpus(list(sentences), CorpusStats())


def manual_vocab(*tokens):
    return Vocab([*SPECIAL_TOKENS, *tokens])


class TestTrainVocab:
    def test_pair_scoring_hand_trace(self):
        # Word "aaab" (freq 3) as symbols: a ##a ##a ##b.
        # Round 1 scores: (a,##a)=3/(3*6), (##a,##a)=3/36, (##a,##b)=3/18.
        #   Tie between (a,##a) and (##a,##b) at 1/6 -> lexicographic pick
        #   ("##a","##b") -> merge "##ab".
        # Round 2: a ##a ##ab; (a,##a) and (##a,##ab) tie at 1/3 -> "##aab".
        # Round 3: a ##aab -> "aaab"; no pairs remain.
        vocab = train_vocab(corpus_of("aaab aaab aaab"), target_size=12, min_freq=1)
        assert vocab.tokens == [
            *SPECIAL_TOKENS, "##a", "##b", "a", "##ab", "##aab", "aaab",
        ]
        assert len(vocab) <= 12

    def test_exact_base_size_means_no_merges(self):
        corpus = corpus_of("ab ab", "ba")
        # alphabet: a, b, ##a, ##b -> base size 9
        vocab = train_vocab(corpus, target_size=9, min_freq=1)
        assert len(vocab) == 9
        assert all("##" == t[:2] or len(t) == 1 for t in vocab.tokens[5:])

    def test_empty_corpus_errors(self):
        with pytest.raises(DataError):
            train_vocab(corpus_of(), target_size=100)

    def test_target_too_small_errors(self):
        with pytest.raises(ConfigError):
            train_vocab(corpus_of("abcdef"), target_size=6, min_freq=1)

    def test_min_freq_drops_rare_chars(self):
        vocab = train_vocab(corpus_of("aa aa aa z"), target_size=64, min_freq=2)
        assert "z" not in vocab.id_of
        assert "a" in vocab.id_of

    def test_deterministic_byte_identical(self):
        sentences = ["the rain keeps falling.", "the sleep never came!", "rain again today."]
        v1 = train_vocab(corpus_of(*sentences), target_size=64, min_freq=1)
        v2 = train_vocab(corpus_of(*sentences), target_size=64, min_freq=1)
        assert v1.serialize() == v2.serialize()
        assert v1.content_hash() == v2.content_hash()


class TestEncode:
    def test_canonical_wordpiece_decomposition(self):
        vocab = manual_vocab("un", "##aff", "##able")
        ids = encode(vocab, "unaffable", max_len=16)
        assert ids == [CLS_ID, vocab.id_of["un"], vocab.id_of["##aff"],
                       vocab.id_of["##able"], SEP_ID]

    def test_uncased_normalization(self):
        vocab = manual_vocab("hello")
        assert encode(vocab, "HELLO", 16) == [CLS_ID, vocab.id_of["hello"], SEP_ID]

    def test_accent_stripping(self):
        vocab = manual_vocab("cafe")
        assert encode(vocab, "Café", 16) == [CLS_ID, vocab.id_of["cafe"], SEP_ID]

    def test_unknown_word_becomes_unk(self):
        vocab = manual_vocab("known")
        ids = encode(vocab, "known qqq", 16)
        assert ids == [CLS_ID, vocab.id_of["known"], UNK_ID, SEP_ID]

    def test_punctuation_split(self):
        vocab = manual_vocab("wait", ",", "what", "?")
        ids = encode(vocab, "wait,what?", 16)
        toks = [vocab.tokens[i] for i in ids]
        assert toks == ["[CLS]", "wait", ",", "what", "?", "[SEP]"]

    def test_truncation_keeps_sep_last(self):
        vocab = manual_vocab("a", "b", "c", "d", "e")
        ids = encode(vocab, "a b c d e", max_len=4)
        assert len(ids) == 4
        assert ids[0] == CLS_ID
        assert ids[-1] == SEP_ID
        assert ids[1:3] == [vocab.id_of["a"], vocab.id_of["b"]]

    def test_max_len_too_small(self):
        with pytest.raises(ConfigError):
            encode(manual_vocab("x"), "x", max_len=1)

    def test_prefix_greedy_longest_prefix_by_enumeration(self):
        vocab = manual_vocab("t", "th", "the", "##e", "##m", "##eme")
        for word in ("the", "them", "theme", "t"):
            ids = encode(vocab, word, 16)[1:-1]
            first = vocab.tokens[ids[0]]
            prefixes = [word[:k] for k in range(len(word), 0, -1)]
            longest = next(p for p in prefixes if p in vocab.id_of)
            assert first == longest


class TestDecode:
    def test_inverse_of_encode_example(self):
        vocab = manual_vocab("un", "##aff", "##able")
        seq = [CLS_ID, vocab.id_of["un"], vocab.id_of["##aff"], vocab.id_of["##able"], SEP_ID]
        assert decode(vocab, seq) == "unaffable"

    def test_empty_content(self):
        vocab = manual_vocab("x")
        assert decode(vocab, [CLS_ID, SEP_ID]) == ""

    def test_out_of_range_id(self):
        vocab = manual_vocab("x")
        with pytest.raises(DataError):
            decode(vocab, [CLS_ID, 999, SEP_ID])

    def test_round_trip_single_words(self):
        vocab = train_vocab(
            corpus_of("rain sleep rain sleep quiet quiet night night"),
            target_size=64, min_freq=1,
        )
        for word in ("rain", "sleep", "quiet", "night", "RAIN"):
            assert decode(vocab, encode(vocab, word, 16)) == word.lower()

    def test_round_trip_decomposable_text(self):
        corpus = corpus_of("the rain returned.", "the night was quiet.")
        vocab = train_vocab(corpus, target_size=128, min_freq=1)
        text = "the rain was quiet"
        assert decode(vocab, encode(vocab, text, 32)) == text


class TestVocabContainer:
    def test_specials_occupy_first_five_ids(self):
        vocab = train_vocab(corpus_of("a b a b"), target_size=16, min_freq=1)
        assert vocab.tokens[:5] == list(SPECIAL_TOKENS)
        assert (PAD_ID, UNK_ID, CLS_ID, SEP_ID, MASK_ID) == (0, 1, 2, 3, 4)

    def test_rejects_missing_specials(self):
        with pytest.raises(ConfigError):
            Vocab(["a", "b"])

    def test_rejects_duplicates(self):
        with pytest.raises(ConfigError):
            Vocab([*SPECIAL_TOKENS, "a", "a"])

    def test_id_of_is_inverse(self):
        vocab = train_vocab(corpus_of("some words here."), target_size=64, min_freq=1)
        for i, t in enumerate(vocab.tokens):
            assert vocab.id_of[t] == i

    def test_save_load_round_trip(self, tmp_path):
        vocab = train_vocab(corpus_of("stable file format."), target_size=64, min_freq=1)
        path = tmp_path / "vocab.txt"
        vocab.save(path)
        again = Vocab.load(path)
        assert again.tokens == vocab.tokens
        assert again.content_hash() == vocab.content_hash()
        vocab.save(tmp_path / "vocab2.txt")
        assert (tmp_path / "vocab.txt").read_bytes() == (tmp_path / "vocab2.txt").read_bytes()


class TestNormalization:
    def test_normalize(self):
        assert normalize("Crème BRÛLÉE") == "creme brulee"

    def test_pretokenize(self):
        assert pretokenize("Don't stop!") == ["don", "'", "t", "stop", "!"]
