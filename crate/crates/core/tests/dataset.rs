use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use got4rec::dataset::*;
use proptest::prelude::*;

fn fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_reviews.jsonl")
}

/// Independent filter: count items, keep frequent ones, then count what is
/// left per user and keep users in range.
fn two_pass_oracle(rows: &[(String, String, i64)], min_item: usize, lo: usize, hi: usize) -> BTreeSet<(String, String, i64)> {
    let mut item_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (_, i, _) in rows {
        *item_counts.entry(i).or_insert(0) += 1;
    }
    let first: Vec<&(String, String, i64)> = rows.iter().filter(|(_, i, _)| item_counts[i.as_str()] >= min_item).collect();
    let mut user_counts: BTreeMap<&str, usize> = BTreeMap::new();
    for (u, _, _) in &first {
        *user_counts.entry(u).or_insert(0) += 1;
    }
    first
        .into_iter()
        .filter(|(u, _, _)| (lo..=hi).contains(&user_counts[u.as_str()]))
        .cloned()
        .collect()
}

fn triples(v: &[Interaction]) -> BTreeSet<(String, String, i64)> {
    v.iter().map(|i| (i.user.clone(), i.item.clone(), i.timestamp)).collect()
}

#[test]
fn toy_fixture_matches_two_pass_oracle() {
    let report = ingest(&fixture(), &FieldMap::default()).unwrap();
    assert_eq!(report.skipped, 3);
    assert_eq!(report.duplicates, 1);
    let rows: Vec<(String, String, i64)> = report.interactions.iter().map(|i| (i.user.clone(), i.item.clone(), i.timestamp)).collect();
    let expected = two_pass_oracle(&rows, 5, 6, 20);
    let filtered = filter_corpus(report.interactions, &FilterConfig::default()).unwrap();
    assert_eq!(triples(&filtered), expected);
    let users: BTreeSet<&str> = filtered.iter().map(|i| i.user.as_str()).collect();
    assert_eq!(users.len(), 12);
    assert!(!users.contains("SHORT") && !users.contains("LONG"));

    let split = split(&group_sequences(filtered)).unwrap();
    assert_eq!(split.stats().to_string(), "users=12 items=9 actions=97");
}

fn arb_corpus() -> impl Strategy<Value = Vec<(String, String, i64)>> {
    prop::collection::vec((0u8..12, 0u8..15, 1i64..40), 40..260).prop_map(|v| {
        let mut seen = BTreeSet::new();
        v.into_iter()
            .map(|(u, i, t)| (format!("u{u:02}"), format!("i{i:02}"), t))
            .filter(|r| seen.insert(r.clone()))
            .collect()
    })
}

proptest! {
    #[test]
    fn filter_matches_oracle_on_random_corpora(rows in arb_corpus()) {
        let interactions: Vec<Interaction> = rows
            .iter()
            .map(|(u, i, t)| Interaction { user: u.clone(), item: i.clone(), title: i.clone(), raw_title: i.clone(), timestamp: *t })
            .collect();
        let expected = two_pass_oracle(&rows, 5, 6, 20);
        match filter_corpus(interactions, &FilterConfig::default()) {
            Ok(out) => prop_assert_eq!(triples(&out), expected),
            Err(DatasetError::EmptyCorpus) => prop_assert!(expected.is_empty()),
            Err(e) => return Err(TestCaseError::fail(e.to_string())),
        }
    }

    #[test]
    fn split_partitions_chronologically(rows in arb_corpus()) {
        let interactions: Vec<Interaction> = rows
            .iter()
            .map(|(u, i, t)| Interaction { user: u.clone(), item: i.clone(), title: i.clone(), raw_title: i.clone(), timestamp: *t })
            .collect();
        let Ok(filtered) = filter_corpus(interactions, &FilterConfig::default()) else { return Ok(()) };
        let seqs = group_sequences(filtered.clone());
        let s = split(&seqs).unwrap();
        let mut total = 0;
        for u in s.users.values() {
            let max_train = u.train.iter().map(|e| e.timestamp).max().unwrap();
            prop_assert!(u.test.timestamp >= u.validation.timestamp);
            prop_assert!(u.validation.timestamp >= max_train);
            let mut all: Vec<(String, i64)> = u.train.iter().chain([&u.validation, &u.test]).map(|e| (e.item.clone(), e.timestamp)).collect();
            total += all.len();
            all.sort();
            let mut original: Vec<(String, i64)> = seqs[&u.user].interactions.iter().map(|i| (i.item.clone(), i.timestamp)).collect();
            original.sort();
            prop_assert_eq!(all, original);
        }
        prop_assert_eq!(total, filtered.len());
    }
}

#[test]
fn fixture_split_respects_time() {
    let report = ingest(&fixture(), &FieldMap::default()).unwrap();
    let s = split(&group_sequences(filter_corpus(report.interactions, &FilterConfig::default()).unwrap())).unwrap();
    for u in s.users.values() {
        let max_train = u.train.iter().map(|e| e.timestamp).max().unwrap();
        assert!(u.test.timestamp >= u.validation.timestamp && u.validation.timestamp >= max_train, "{}", u.user);
    }
    // A07's last two interactions share a timestamp; item id decides.
    let a07 = &s.users["A07"];
    assert_eq!(a07.validation.timestamp, a07.test.timestamp);
    assert!(a07.validation.item < a07.test.item);
}

#[test]
fn manifest_round_trip_is_byte_stable() {
    let build = || {
        let report = ingest(&fixture(), &FieldMap::default()).unwrap();
        let s = split(&group_sequences(filter_corpus(report.interactions, &FilterConfig::default()).unwrap())).unwrap();
        let mut buf = Vec::new();
        s.write_manifest(&mut buf).unwrap();
        (s, buf)
    };
    let (s, a) = build();
    let (_, b) = build();
    assert_eq!(a, b);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("split.jsonl");
    std::fs::write(&path, &a).unwrap();
    assert_eq!(SplitDataset::read_manifest(&path).unwrap(), s);
}

#[test]
fn sample_of_three_thousand_is_reproducible() {
    let users: Vec<String> = (0..5000).map(|i| format!("user{i:05}")).collect();
    let a = sample_users(&users, 3000, SEED_PRESETS[0]);
    assert_eq!(a.len(), 3000);
    assert_eq!(a, sample_users(&users, 3000, SEED_PRESETS[0]));
    assert_ne!(a, sample_users(&users, 3000, SEED_PRESETS[1]));
    let small: Vec<String> = (0..12).map(|i| format!("u{i:02}")).collect();
    assert_eq!(sample_users(&small, 3000, 1), small);
}

#[test]
fn independent_samples_overlap_by_about_half() {
    // Hypergeometric: mean 25, sd = sqrt(50 * 0.5 * 0.5 * 50 / 99) ~ 2.51
    let users: Vec<String> = (0..100).map(|i| format!("u{i:03}")).collect();
    let overlap = |a: u64, b: u64| -> usize {
        let x: BTreeSet<String> = sample_users(&users, 50, a).into_iter().collect();
        sample_users(&users, 50, b).into_iter().filter(|u| x.contains(u)).count()
    };
    let sd = (50.0f64 * 0.5 * 0.5 * 50.0 / 99.0).sqrt();
    let o = overlap(SEED_PRESETS[0], SEED_PRESETS[1]) as f64;
    assert!((o - 25.0).abs() <= 3.0 * sd, "overlap {o}");
    let pairs = 200;
    let mean = (0..pairs).map(|i| overlap(1000 + i, 5000 + i) as f64).sum::<f64>() / pairs as f64;
    assert!((mean - 25.0).abs() <= 3.0 * sd / (pairs as f64).sqrt(), "mean overlap {mean}");
}
