import io

import pytest

from lipviseme.lexicon import (
    ARPABET,
    DictionaryParseError,
    InvalidTokenError,
    InvalidWordError,
    MappingGapError,
    OovError,
    VisemeTableError,
    load_default_viseme_table,
    load_lexicon,
    multi_hot_from_visemes,
    parse_pronouncing_dictionary,
    phonemes_to_visemes,
    strip_stress,
    word_to_multihot,
    word_to_phonemes,
)


@pytest.fixture(scope="module")
def lexicon():
    return load_lexicon()


@pytest.fixture(scope="module")
def table():
    return load_default_viseme_table()


class TestParsing:
    def test_single_entry(self):
        lex = parse_pronouncing_dictionary(["BET  B EH1 T"])
        assert lex.variants("BET") == [("B", "EH1", "T")]

    def test_comments_only_gives_empty_lexicon(self):
        lex = parse_pronouncing_dictionary([";;; header", ";;; more"])
        assert len(lex) == 0

    def test_variants_grouped_in_order(self):
        lex = parse_pronouncing_dictionary(["A  AH0", "A(1)  EY1"])
        assert lex.variants("A") == [("AH0",), ("EY1",)]

    def test_entry_without_phonemes_reports_line(self):
        with pytest.raises(DictionaryParseError) as err:
            parse_pronouncing_dictionary(["BET  B EH1 T", "BROKEN"])
        assert err.value.line_number == 2

    def test_unparsable_variant_index(self):
        with pytest.raises(DictionaryParseError):
            parse_pronouncing_dictionary(["A  AH0", "A(x)  EY1"])

    def test_variant_before_base_rejected(self):
        with pytest.raises(DictionaryParseError):
            parse_pronouncing_dictionary(["A(1)  EY1"])

    def test_duplicate_base_entry_rejected(self):
        with pytest.raises(DictionaryParseError):
            parse_pronouncing_dictionary(["A  AH0", "A  EY1"])

    def test_round_trip(self, lexicon):
        reparsed = parse_pronouncing_dictionary(io.StringIO(lexicon.to_text()))
        assert list(reparsed.words()) == list(lexicon.words())
        for word in lexicon.words():
            assert reparsed.variants(word) == lexicon.variants(word)


class TestStripStress:
    @pytest.mark.parametrize("token,expected", [("EH1", "EH"), ("B", "B"), ("AH0", "AH"), ("EY2", "EY")])
    def test_examples(self, token, expected):
        assert strip_stress(token) == expected

    def test_all_digits_rejected(self):
        with pytest.raises(InvalidTokenError):
            strip_stress("12")

    def test_empty_rejected(self):
        with pytest.raises(InvalidTokenError):
            strip_stress("")


class TestVisemeTable:
    def test_shipped_table_has_18_groups(self, table):
        assert len(table.visemes) == 18
        assert sorted(v.index for v in table.visemes) == list(range(18))

    def test_shipped_table_covers_the_39_arpabet_symbols(self, table):
        assert table.phonemes == ARPABET

    @staticmethod
    def _dummy_groups(count, start=0):
        # Unique two-letter uppercase tokens: QA, QB, QC, ...
        return [f"G{start + n}: Q{chr(ord('A') + start + n)}" for n in range(count)]

    def test_duplicate_phoneme_conflict(self):
        from lipviseme.lexicon import load_viseme_table

        lines = ["PA: P B", "PB: B M"] + self._dummy_groups(16)
        with pytest.raises(VisemeTableError) as err:
            load_viseme_table(lines)
        assert "'B'" in str(err.value)

    def test_wrong_group_count(self):
        from lipviseme.lexicon import load_viseme_table

        with pytest.raises(VisemeTableError) as err:
            load_viseme_table(self._dummy_groups(17))
        assert "17" in str(err.value)

    def test_empty_group_rejected(self):
        from lipviseme.lexicon import load_viseme_table

        lines = self._dummy_groups(17) + ["LAST:"]
        with pytest.raises(VisemeTableError):
            load_viseme_table(lines)

    def test_comments_and_blank_lines_allowed(self, table):
        from lipviseme.lexicon import load_viseme_table

        text = ["# comment", ""] + [f"{v.name}: " + " ".join(sorted(p for p in table.phonemes if table.viseme(p) == v)) for v in table.visemes]
        reloaded = load_viseme_table(text)
        assert {v.name for v in reloaded.visemes} == {v.name for v in table.visemes}


class TestWordLookup:
    def test_bet(self, lexicon):
        assert word_to_phonemes(lexicon, "BET") == ("B", "EH", "T")

    def test_lowercase_input_uppercased(self, lexicon):
        assert word_to_phonemes(lexicon, "choke") == ("CH", "OW", "K")

    def test_oov(self, lexicon):
        with pytest.raises(OovError):
            word_to_phonemes(lexicon, "ZZZXQ")

    def test_variant_policy_all(self, lexicon):
        sequences = word_to_phonemes(lexicon, "A", variant_policy="all")
        assert sequences == [("AH",), ("EY",)]

    def test_invalid_word_rejected(self, lexicon):
        with pytest.raises(InvalidWordError):
            word_to_phonemes(lexicon, "B3T")

    def test_bad_policy(self, lexicon):
        with pytest.raises(ValueError):
            word_to_phonemes(lexicon, "BET", variant_policy="any")


class TestVisemeMapping:
    def test_homophene_sequences(self, lexicon, table):
        pairs = [("BET", "BAT"), ("CHOKE", "JOKE")]
        for left, right in pairs:
            left_v = phonemes_to_visemes(table, word_to_phonemes(lexicon, left))
            right_v = phonemes_to_visemes(table, word_to_phonemes(lexicon, right))
            assert left_v == right_v

    def test_empty_sequence(self, table):
        assert phonemes_to_visemes(table, ()) == ()

    def test_mapping_gap_names_phoneme(self, table):
        with pytest.raises(MappingGapError) as err:
            phonemes_to_visemes(table, ("B", "QX"))
        assert "QX" in str(err.value)

    def test_length_preserved_over_lexicon(self, lexicon, table):
        for word in lexicon.words():
            for phones in lexicon.phonemes(word, "all"):
                assert len(phonemes_to_visemes(table, phones)) == len(phones)

    def test_consecutive_duplicates_kept(self, table):
        visemes = phonemes_to_visemes(table, ("P", "B", "M"))
        assert len(visemes) == 3
        assert len({v.index for v in visemes}) == 1


class TestMultiHot:
    def test_homophene_vectors_identical(self, lexicon, table):
        assert word_to_multihot(table, lexicon, "BET").multi_hot == word_to_multihot(table, lexicon, "BAT").multi_hot
        assert word_to_multihot(table, lexicon, "CHOKE").multi_hot == word_to_multihot(table, lexicon, "JOKE").multi_hot

    def test_popcount_equals_distinct_visemes(self, lexicon, table):
        for word in ("ABOUT", "PRESSURE", "GEORGE", "THE"):
            label = word_to_multihot(table, lexicon, word)
            assert sum(label.multi_hot) == len({v.index for v in label.viseme_sequence})

    def test_against_brute_force(self, lexicon, table):
        label = word_to_multihot(table, lexicon, "BET")
        present = {table.viseme(p).index for p in word_to_phonemes(lexicon, "BET")}
        expected = tuple(1 if i in present else 0 for i in range(18))
        assert label.multi_hot == expected

    def test_consistency_over_lexicon(self, lexicon, table):
        for word in lexicon.words():
            label = word_to_multihot(table, lexicon, word)
            assert len(label.multi_hot) == 18
            present = {v.index for v in label.viseme_sequence}
            assert all((label.multi_hot[i] == 1) == (i in present) for i in range(18))

    def test_variant_union(self, lexicon, table):
        first = word_to_multihot(table, lexicon, "A", "first")
        union = word_to_multihot(table, lexicon, "A", "all")
        assert sum(union.multi_hot) >= sum(first.multi_hot)
        assert all(u >= f for u, f in zip(union.multi_hot, first.multi_hot))

    def test_json_export_fields(self, lexicon, table):
        import json

        record = json.loads(word_to_multihot(table, lexicon, "BET").to_json())
        assert set(record) == {"word", "phonemes", "visemes", "multi_hot"}
        assert record["word"] == "BET"
        assert len(record["multi_hot"]) == 18

    def test_multi_hot_from_visemes_empty(self):
        assert multi_hot_from_visemes(()) == (0,) * 18


def test_table_total_over_shipped_lexicon(lexicon=None):
    lexicon = load_lexicon()
    table = load_default_viseme_table()
    for word in lexicon.words():
        for phones in lexicon.phonemes(word, "all"):
            phonemes_to_visemes(table, phones)
