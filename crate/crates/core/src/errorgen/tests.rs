use std::io::Write;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::baseline::distance;
use crate::charlex::{Alphabet, Lexicon, DEFAULT_MASK_GLYPH};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn table(entries: &[(&str, &[&str])]) -> ConfusionTable {
    ConfusionTable::new(entries.iter().map(|(k, vs)| {
        (
            k.to_string(),
            vs.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        )
    }))
    .unwrap()
}

fn lex(words: &[&str]) -> Lexicon {
    Lexicon::from_words(words.iter().map(|w| w.to_string())).unwrap()
}

#[test]
fn substitution_with_single_choice_is_forced() {
    let t = table(&[("o", &["0"])]);
    let pair = gen_substitution("word", &t, ErrorType::Cognitive, '_', &mut rng(1)).unwrap();
    assert_eq!(pair.source, "w0rd");
    assert_eq!(pair.mask, "w_rd");
    assert_eq!(pair.target, "word");
    assert_eq!(pair.error_type, ErrorType::Cognitive);
}

#[test]
fn substitution_without_key_is_not_applicable() {
    let t = table(&[("o", &["0"])]);
    assert!(gen_substitution("zzz", &t, ErrorType::Cognitive, '_', &mut rng(1)).is_none());
}

#[test]
fn substitution_has_unit_edit_distance_one() {
    let t = table(&[("o", &["0", "p"]), ("r", &["t"])]);
    for seed in 0..20 {
        let pair = gen_substitution("lorrow", &t, ErrorType::VisualSingle, '_', &mut rng(seed))
            .unwrap();
        assert_eq!(distance(&pair.source, &pair.target), 1);
        assert_eq!(pair.source.chars().count(), pair.target.chars().count());
    }
}

#[test]
fn combined_substitution_masks_the_whole_unit() {
    let t = table(&[("ch", &["k"])]);
    let pair = gen_substitution("chart", &t, ErrorType::VisualCombined, '_', &mut rng(3)).unwrap();
    assert_eq!(pair.source, "kart");
    assert_eq!(pair.mask, "_art");
    assert_eq!(pair.target, "chart");
}

#[test]
fn deletion_shortens_by_one() {
    for seed in 0..20 {
        let pair = gen_deletion("word", '_', &mut rng(seed)).unwrap();
        assert_eq!(pair.source.chars().count(), 3);
        assert_eq!(pair.target, "word");
        assert_eq!(distance(&pair.source, &pair.target), 1);
        assert_eq!(pair.mask, derive_mask(&pair.source, &pair.target, '_'));
    }
    assert!(gen_deletion("a", '_', &mut rng(0)).is_none());
}

#[test]
fn deletion_mask_matches_oracle_example() {
    // removing the 'o' gives source "wrd"; the cursor rule masks the position
    // after the kept 'w'.
    assert_eq!(derive_mask("wrd", "word", '_'), "w_d");
}

#[test]
fn transposition_swaps_adjacent_distinct() {
    for seed in 0..20 {
        let pair = gen_transposition("word", '_', &mut rng(seed)).unwrap();
        assert_ne!(pair.source, pair.target);
        let mut src: Vec<char> = pair.source.chars().collect();
        let tgt: Vec<char> = pair.target.chars().collect();
        let diffs: Vec<usize> = (0..src.len()).filter(|&i| src[i] != tgt[i]).collect();
        assert_eq!(diffs.len(), 2);
        assert_eq!(diffs[1], diffs[0] + 1);
        // swapping again restores the word
        src.swap(diffs[0], diffs[1]);
        assert_eq!(src, tgt);
        // two adjacent mask glyphs
        let mask: Vec<char> = pair.mask.chars().collect();
        assert_eq!(mask[diffs[0]], '_');
        assert_eq!(mask[diffs[1]], '_');
    }
    assert!(gen_transposition("aaa", '_', &mut rng(0)).is_none());
}

#[test]
fn insertion_duplicates_in_place() {
    for seed in 0..20 {
        let pair = gen_insertion("word", InsertionKind::Duplicate, '_', &mut rng(seed)).unwrap();
        assert_eq!(pair.source.chars().count(), 5);
        assert_eq!(distance(&pair.source, &pair.target), 1);
        assert_eq!(pair.mask, derive_mask(&pair.source, &pair.target, '_'));
    }
    let pair = gen_insertion("a", InsertionKind::Duplicate, '_', &mut rng(0)).unwrap();
    assert_eq!(pair.source, "aa");
    assert_eq!(pair.mask, "a_");
}

#[test]
fn keyboard_insertion_uses_the_table() {
    let t = table(&[("o", &["p"])]);
    let pair =
        gen_insertion("word", InsertionKind::Keyboard(&t), '_', &mut rng(0)).unwrap();
    assert_eq!(pair.source, "wopr".to_string() + "d");
    assert!(gen_insertion("zzz", InsertionKind::Keyboard(&t), '_', &mut rng(0)).is_none());
}

#[test]
fn split_classifies_by_membership() {
    let lexicon = lex(&["foot", "ball", "football"]);
    let pair =
        gen_split_of_kind("football", &lexicon, ErrorType::SplitBoth, '_', &mut rng(0)).unwrap();
    assert_eq!(pair.source, "foot ball");
    assert_eq!(pair.mask, "foot_ball");
    assert_eq!(pair.target, "football");

    let pair =
        gen_split_of_kind("football", &lexicon, ErrorType::SplitRandom, '_', &mut rng(0)).unwrap();
    let (a, b) = pair.source.split_once(' ').unwrap();
    assert!(!lexicon.contains(a) && !lexicon.contains(b));
}

#[test]
fn split_masks_exactly_the_space() {
    let lexicon = lex(&["foot", "ball"]);
    for seed in 0..10 {
        let pair = gen_split("football", &lexicon, '_', &mut rng(seed)).unwrap();
        assert_eq!(pair.mask.chars().filter(|&c| c == '_').count(), 1);
        let space_at = pair.source.chars().position(|c| c == ' ').unwrap();
        assert_eq!(pair.mask.chars().nth(space_at), Some('_'));
    }
    assert!(gen_split("a", &lexicon, '_', &mut rng(0)).is_none());
}

#[test]
fn runon_appends_a_lexicon_word() {
    let lexicon = lex(&["foot", "ball"]);
    let pair = gen_runon("foot", &lexicon, '_', &mut rng(0)).unwrap();
    assert_eq!(pair.source, "football");
    assert_eq!(pair.mask, "foot____");
    assert_eq!(pair.target, "foot");
    // lexicon with one word has no second word to append
    assert!(gen_runon("foot", &lex(&["foot"]), '_', &mut rng(0)).is_none());
}

#[test]
fn homonym_file_round_trip() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "their,there\ntheir,there\nknight,night").unwrap();
    let pairs = load_homonyms(f.path(), '_').unwrap();
    assert_eq!(pairs.len(), 2);
    assert_eq!(pairs[0].source, "their");
    assert_eq!(pairs[0].target, "there");
    assert_eq!(pairs[0].error_type, ErrorType::Homonym);

    let empty = tempfile::NamedTempFile::new().unwrap();
    assert!(load_homonyms(empty.path(), '_').unwrap().is_empty());

    let mut bad = tempfile::NamedTempFile::new().unwrap();
    writeln!(bad, "one,two,three").unwrap();
    let err = load_homonyms(bad.path(), '_').unwrap_err();
    assert!(err.to_string().contains(":1"));
}

#[test]
fn derive_mask_spec_examples() {
    assert_eq!(derive_mask("wprd", "word", '_'), "w_rd");
    assert_eq!(derive_mask("word", "word", '_'), "word");
    assert_eq!(derive_mask("football", "foot", '_'), "foot____");
    assert_eq!(derive_mask("wrd", "word", '_'), "w_d");
    assert_eq!(derive_mask("", "abc", '_'), "");
}

#[test]
fn filter_keeps_everything_at_percentile_one() {
    let lexicon = lex(&["word", "work", "worm"]);
    let scorer = TrigramScorer::fit(&lexicon);
    let pairs: Vec<ParallelPair> = (0..10)
        .map(|seed| gen_deletion("word", '_', &mut rng(seed)).unwrap())
        .collect();
    let kept = filter_errors(pairs.clone(), &scorer, 1.0).unwrap();
    assert_eq!(kept, pairs);
}

#[test]
fn filter_drops_at_most_the_top_decile() {
    let lexicon = lex(&["word", "work", "worm", "ward"]);
    let scorer = TrigramScorer::fit(&lexicon);
    let words = ["word", "work", "worm", "ward", "sword", "wordy", "warden", "worker", "wormy", "award"];
    let pairs: Vec<ParallelPair> = words
        .iter()
        .enumerate()
        .map(|(i, w)| gen_deletion(w, '_', &mut rng(i as u64)).unwrap())
        .collect();
    assert_eq!(pairs.len(), 10);
    let kept = filter_errors(pairs, &scorer, 0.9).unwrap();
    assert!(kept.len() >= 9, "kept {}", kept.len());
}

#[test]
fn filter_never_touches_other_types() {
    let lexicon = lex(&["word"]);
    let scorer = TrigramScorer::fit(&lexicon);
    let t = table(&[("o", &["0"])]);
    let pairs: Vec<ParallelPair> = (0..5)
        .map(|s| gen_substitution("word", &t, ErrorType::Cognitive, '_', &mut rng(s)).unwrap())
        .collect();
    let kept = filter_errors(pairs.clone(), &scorer, 0.5).unwrap();
    assert_eq!(kept, pairs);
}

fn toy_alphabet() -> Alphabet {
    Alphabet::new('a'..='z', ["ch".to_string()], DEFAULT_MASK_GLYPH).unwrap()
}

fn toy_tables() -> GeneratorTables {
    GeneratorTables {
        cognitive: Some(table(&[("a", &["e"]), ("e", &["i"]), ("o", &["u"])])),
        visual_single: Some(table(&[("l", &["i"]), ("m", &["n"])])),
        visual_combined: Some(table(&[("ch", &["k"])])),
        typo_subst_avro: Some(table(&[("t", &["r"]), ("s", &["d"])])),
        typo_subst_bijoy: Some(table(&[("n", &["b"]), ("r", &["e"])])),
        insertion: None,
    }
}

fn toy_lexicon() -> Lexicon {
    lex(&[
        "foot", "ball", "football", "rain", "bow", "rainbow", "chart", "match", "stone",
        "water", "melon", "watermelon", "note", "book", "notebook", "chest", "plant",
    ])
}

#[test]
fn assemble_zero_quotas_is_empty() {
    let (pairs, report) = assemble_corpus(
        &toy_lexicon(),
        &toy_alphabet(),
        &toy_tables(),
        None,
        &Quotas::default(),
        InsertionMode::Duplicate,
        7,
    )
    .unwrap();
    assert!(pairs.is_empty());
    assert_eq!(report.total(), 0);
}

#[test]
fn assemble_is_deterministic_and_reports_shortfalls() {
    let quotas = Quotas::uniform(5);
    let run = |seed| {
        assemble_corpus(
            &toy_lexicon(),
            &toy_alphabet(),
            &toy_tables(),
            None,
            &quotas,
            InsertionMode::Duplicate,
            seed,
        )
        .unwrap()
    };
    let (a, report_a) = run(42);
    let (b, _) = run(42);
    let (c, _) = run(43);
    assert_eq!(a, b);
    assert_ne!(a, c);
    // homonym quota is unreachable without a file
    assert!(report_a.warnings.iter().any(|w| w.contains("homonym")));
    // every generated pair self-reports a plausible type
    for pair in &a {
        assert_eq!(pair.mask.chars().count(), pair.source.chars().count());
        assert_ne!(pair.source, pair.target);
        assert!(pair.mask.contains('_'));
    }
}

#[test]
fn split_proportions_per_type() {
    let t = table(&[("o", &["0"])]);
    let mut corpus = Vec::new();
    for i in 0..100 {
        let mut pair =
            gen_substitution("wood", &t, ErrorType::Cognitive, '_', &mut rng(i)).unwrap();
        pair.target = format!("wood{i}");
        corpus.push(pair);
    }
    let split = stratified_split(&corpus, (0.80, 0.05, 0.15), 11).unwrap();
    assert_eq!(split.train.len(), 80);
    assert_eq!(split.validation.len(), 5);
    assert_eq!(split.test.len(), 15);
}

#[test]
fn split_of_empty_corpus_is_empty() {
    let split = stratified_split(&[], (0.80, 0.05, 0.15), 0).unwrap();
    assert!(split.train.is_empty() && split.validation.is_empty() && split.test.is_empty());
}

#[test]
fn split_rejects_bad_ratios() {
    assert!(stratified_split(&[], (0.5, 0.2, 0.2), 0).is_err());
}

#[test]
fn corpus_csv_round_trip() {
    let pairs = vec![
        ParallelPair {
            source: "foot ball".into(),
            mask: "foot_ball".into(),
            target: "football".into(),
            error_type: ErrorType::SplitBoth,
        },
        ParallelPair {
            source: "w0rd".into(),
            mask: "w_rd".into(),
            target: "word".into(),
            error_type: ErrorType::Cognitive,
        },
    ];
    let f = tempfile::NamedTempFile::new().unwrap();
    write_corpus(&pairs, f.path()).unwrap();
    let back = read_corpus(f.path()).unwrap();
    assert_eq!(back, pairs);
}

#[test]
fn unknown_error_type_label_is_a_data_error() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    writeln!(f, "source,mask,target,error_type\nab,a_,ac,bogus").unwrap();
    let err = read_corpus(f.path()).unwrap_err();
    assert!(err.to_string().contains("bogus"));
    assert!(err.to_string().contains(":2"));
}

fn arb_error_type() -> impl Strategy<Value = ErrorType> {
    prop::sample::select(ErrorType::ALL.to_vec())
}

proptest! {
    #[test]
    fn derive_mask_invariants(source in "[a-z ]{0,12}", target in "[a-z ]{0,12}") {
        let mask = derive_mask(&source, &target, '_');
        let src: Vec<char> = source.chars().collect();
        let m: Vec<char> = mask.chars().collect();
        prop_assert_eq!(m.len(), src.len());
        for (j, &c) in m.iter().enumerate() {
            prop_assert!(c == src[j] || c == '_');
        }
        if source == target {
            prop_assert_eq!(&mask, &source);
        } else if !source.is_empty() {
            prop_assert!(mask.contains('_'));
        }
    }

    #[test]
    fn csv_round_trip_is_identity(
        rows in prop::collection::vec(
            ("[a-z ,\"]{1,8}", "[a-z ,\"]{1,8}", "[a-z ,\"]{1,8}", arb_error_type()),
            1..8,
        )
    ) {
        let pairs: Vec<ParallelPair> = rows
            .into_iter()
            .map(|(s, m, t, ty)| ParallelPair {
                source: s,
                mask: m,
                target: t,
                error_type: ty,
            })
            .collect();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_corpus(&pairs, f.path()).unwrap();
        prop_assert_eq!(read_corpus(f.path()).unwrap(), pairs);
    }

    #[test]
    fn stratified_split_is_a_partition(counts in prop::collection::vec(1usize..40, 1..5), seed in 0u64..50) {
        let mut corpus = Vec::new();
        for (ti, &n) in counts.iter().enumerate() {
            let ty = ErrorType::ALL[ti];
            for k in 0..n {
                corpus.push(ParallelPair {
                    source: format!("s{ti}x{k}"),
                    mask: format!("s{ti}x{k}"),
                    target: format!("t{ti}x{k}"),
                    error_type: ty,
                });
            }
        }
        let split = stratified_split(&corpus, (0.80, 0.05, 0.15), seed).unwrap();
        let total = split.train.len() + split.validation.len() + split.test.len();
        prop_assert_eq!(total, corpus.len());

        // union as multiset equals the input
        let mut all: Vec<String> = split.train.iter()
            .chain(split.validation.iter())
            .chain(split.test.iter())
            .map(|p| format!("{}|{}", p.source, p.target))
            .collect();
        let mut want: Vec<String> = corpus.iter()
            .map(|p| format!("{}|{}", p.source, p.target))
            .collect();
        all.sort();
        want.sort();
        prop_assert_eq!(all, want);

        // per-type ratio deviation at most one pair
        for (ti, &n) in counts.iter().enumerate() {
            let ty = ErrorType::ALL[ti];
            let tr = split.train.iter().filter(|p| p.error_type == ty).count() as f64;
            let va = split.validation.iter().filter(|p| p.error_type == ty).count() as f64;
            let te = split.test.iter().filter(|p| p.error_type == ty).count() as f64;
            prop_assert!((tr - 0.80 * n as f64).abs() <= 1.0);
            prop_assert!((va - 0.05 * n as f64).abs() <= 1.0);
            prop_assert!((te - 0.15 * n as f64).abs() <= 1.0);
        }
    }
}
