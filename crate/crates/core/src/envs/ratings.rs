//! Rating-log ingestion.
//!
//! One record per line: `user item rating timestamp`, separated by a tab, a
//! comma or `::` (detected from the first non-empty line). A first line whose
//! leading field is not numeric is treated as a header and skipped.

use std::collections::{HashMap, HashSet};
use std::io::BufRead;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

pub const MIN_RATING: f64 = 1.0;
pub const MAX_RATING: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rating {
    pub user: u64,
    pub item: u64,
    pub rating: f64,
    pub timestamp: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Delimiter {
    Tab,
    Comma,
    DoubleColon,
}

impl Delimiter {
    pub fn as_str(self) -> &'static str {
        match self {
            Delimiter::Tab => "\t",
            Delimiter::Comma => ",",
            Delimiter::DoubleColon => "::",
        }
    }

    fn detect(line: &str) -> Option<Self> {
        if line.contains("::") {
            Some(Delimiter::DoubleColon)
        } else if line.contains('\t') {
            Some(Delimiter::Tab)
        } else if line.contains(',') {
            Some(Delimiter::Comma)
        } else {
            None
        }
    }
}

/// Validated ratings with dense user/item indices assigned by first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct RatingsTable {
    records: Vec<Rating>,
    users: Vec<u64>,
    items: Vec<u64>,
    user_index: HashMap<u64, usize>,
    item_index: HashMap<u64, usize>,
}

impl RatingsTable {
    pub fn from_records(records: Vec<Rating>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut seen = HashSet::with_capacity(records.len());
        let mut table = Self {
            records: Vec::with_capacity(records.len()),
            users: Vec::new(),
            items: Vec::new(),
            user_index: HashMap::new(),
            item_index: HashMap::new(),
        };
        for (n, r) in records.into_iter().enumerate() {
            if !(MIN_RATING..=MAX_RATING).contains(&r.rating) {
                return Err(Error::Range {
                    line: n + 1,
                    value: r.rating,
                    lo: MIN_RATING,
                    hi: MAX_RATING,
                });
            }
            if !seen.insert((r.user, r.item, r.timestamp)) {
                return Err(Error::Parse {
                    line: n + 1,
                    msg: format!(
                        "duplicate record for user {} item {} at {}",
                        r.user, r.item, r.timestamp
                    ),
                });
            }
            table.push(r);
        }
        Ok(table)
    }

    fn push(&mut self, r: Rating) {
        if !self.user_index.contains_key(&r.user) {
            self.user_index.insert(r.user, self.users.len());
            self.users.push(r.user);
        }
        if !self.item_index.contains_key(&r.item) {
            self.item_index.insert(r.item, self.items.len());
            self.items.push(r.item);
        }
        self.records.push(r);
    }

    pub fn records(&self) -> &[Rating] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    /// Raw user ids in index order.
    pub fn users(&self) -> &[u64] {
        &self.users
    }

    /// Raw item ids in index order.
    pub fn items(&self) -> &[u64] {
        &self.items
    }

    pub fn user_idx(&self, user: u64) -> Option<usize> {
        self.user_index.get(&user).copied()
    }

    pub fn item_idx(&self, item: u64) -> Option<usize> {
        self.item_index.get(&item).copied()
    }

    /// `(user index, item index, rating)` triples in record order.
    pub fn indexed(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        self.records
            .iter()
            .map(|r| (self.user_index[&r.user], self.item_index[&r.item], r.rating))
    }

    pub fn to_delimited(&self, delim: Delimiter) -> String {
        let d = delim.as_str();
        let mut out = String::with_capacity(self.records.len() * 24);
        for r in &self.records {
            out.push_str(&format!("{}{d}{}{d}{}{d}{}\n", r.user, r.item, r.rating, r.timestamp));
        }
        out
    }
}

pub fn ingest_ratings<R: BufRead>(source: R) -> Result<RatingsTable> {
    let mut delim: Option<Delimiter> = None;
    let mut records = Vec::new();
    let mut seen = HashSet::new();
    let mut first_content = true;
    for (n, line) in source.lines().enumerate() {
        let line_no = n + 1;
        let line = line?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() {
            continue;
        }
        let d = match delim {
            Some(d) => d,
            None => {
                let d = Delimiter::detect(line).ok_or_else(|| Error::Parse {
                    line: line_no,
                    msg: "no tab, comma or '::' delimiter found".into(),
                })?;
                delim = Some(d);
                d
            }
        };
        let fields: Vec<&str> = line.split(d.as_str()).map(str::trim).collect();
        if first_content {
            first_content = false;
            if fields[0].parse::<f64>().is_err() {
                continue;
            }
        }
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("expected 4 fields, found {}", fields.len()),
            });
        }
        let parse_err = |what: &str, v: &str| Error::Parse {
            line: line_no,
            msg: format!("invalid {what} '{v}'"),
        };
        let user: u64 = fields[0].parse().map_err(|_| parse_err("user id", fields[0]))?;
        let item: u64 = fields[1].parse().map_err(|_| parse_err("item id", fields[1]))?;
        let rating: f64 = fields[2].parse().map_err(|_| parse_err("rating", fields[2]))?;
        let timestamp: i64 = fields[3].parse().map_err(|_| parse_err("timestamp", fields[3]))?;
        if !rating.is_finite() {
            return Err(parse_err("rating", fields[2]));
        }
        if !(MIN_RATING..=MAX_RATING).contains(&rating) {
            return Err(Error::Range {
                line: line_no,
                value: rating,
                lo: MIN_RATING,
                hi: MAX_RATING,
            });
        }
        if !seen.insert((user, item, timestamp)) {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("duplicate record for user {user} item {item} at {timestamp}"),
            });
        }
        records.push(Rating {
            user,
            item,
            rating,
            timestamp,
        });
    }
    RatingsTable::from_records(records)
}

/// Deterministic stand-in for the MovieLens-100k `u.data` file: 100 000
/// ratings by 943 users of 1682 items, every user with at least 20 ratings,
/// integer stars drawn from a latent-factor model with popularity skew.
pub fn synthetic_movielens_100k(seed: u64) -> String {
    const USERS: usize = 943;
    const ITEMS: usize = 1682;
    const RECORDS: usize = 100_000;
    const MIN_PER_USER: usize = 20;
    const K: usize = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = |rng: &mut ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
    let user_f: Vec<f64> = (0..USERS * K).map(|_| 0.45 * normal(&mut rng)).collect();
    let item_f: Vec<f64> = (0..ITEMS * K).map(|_| 0.45 * normal(&mut rng)).collect();
    let user_b: Vec<f64> = (0..USERS).map(|_| 0.4 * normal(&mut rng)).collect();
    let item_b: Vec<f64> = (0..ITEMS).map(|_| 0.5 * normal(&mut rng)).collect();

    // Zipf-like popularity over items, heavier activity for some users.
    let item_w: Vec<f64> = (0..ITEMS).map(|i| 1.0 / (1.0 + i as f64).powf(0.8)).collect();
    let user_w: Vec<f64> = (0..USERS).map(|_| (0.9 * normal(&mut rng)).exp()).collect();
    let item_cdf = cumulative(&item_w);
    let user_cdf = cumulative(&user_w);
    let item_perm = {
        let mut p: Vec<usize> = (0..ITEMS).collect();
        for i in (1..ITEMS).rev() {
            p.swap(i, rng.random_range(0..=i));
        }
        p
    };

    let mut rated: Vec<HashSet<usize>> = vec![HashSet::new(); USERS];
    let mut pairs = Vec::with_capacity(RECORDS);
    for (u, seen) in rated.iter_mut().enumerate() {
        while seen.len() < MIN_PER_USER {
            let i = item_perm[sample_cdf(&item_cdf, rng.random())];
            if seen.insert(i) {
                pairs.push((u, i));
            }
        }
    }
    // every item rated at least once
    let mut item_seen = vec![false; ITEMS];
    pairs.iter().for_each(|&(_, i)| item_seen[i] = true);
    for (i, seen) in item_seen.iter_mut().enumerate() {
        while !*seen {
            let u = sample_cdf(&user_cdf, rng.random());
            if rated[u].insert(i) {
                pairs.push((u, i));
                *seen = true;
            }
        }
    }
    while pairs.len() < RECORDS {
        let u = sample_cdf(&user_cdf, rng.random());
        let i = item_perm[sample_cdf(&item_cdf, rng.random())];
        if rated[u].insert(i) {
            pairs.push((u, i));
        }
    }
    for i in (1..pairs.len()).rev() {
        pairs.swap(i, rng.random_range(0..=i));
    }

    let mut out = String::with_capacity(RECORDS * 24);
    let mut ts: i64 = 874_724_710;
    for (u, i) in pairs {
        let affinity: f64 = (0..K).map(|f| user_f[u * K + f] * item_f[i * K + f]).sum();
        let noise = 0.75 * normal(&mut rng);
        let raw = 3.53 + user_b[u] + item_b[i] + 1.6 * affinity + noise;
        let stars = raw.round().clamp(1.0, 5.0) as u8;
        ts += rng.random_range(1..400);
        out.push_str(&format!("{}\t{}\t{}\t{}\n", u + 1, i + 1, stars, ts));
    }
    out
}

fn cumulative(w: &[f64]) -> Vec<f64> {
    let total: f64 = w.iter().sum();
    let mut acc = 0.0;
    w.iter()
        .map(|x| {
            acc += x / total;
            acc
        })
        .collect()
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    cdf.partition_point(|&c| c < u).min(cdf.len() - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_movielens_line() {
        let t = ingest_ratings("196\t242\t3\t881250949\n".as_bytes()).unwrap();
        assert_eq!(
            t.records()[0],
            Rating {
                user: 196,
                item: 242,
                rating: 3.0,
                timestamp: 881250949
            }
        );
        assert_eq!((t.n_users(), t.n_items()), (1, 1));
    }

    #[test]
    fn empty_input() {
        assert!(matches!(ingest_ratings("".as_bytes()), Err(Error::EmptyDataset)));
        assert!(matches!(ingest_ratings("\n\n".as_bytes()), Err(Error::EmptyDataset)));
    }

    #[test]
    fn wrong_field_count_names_line() {
        let src = "1\t2\t3\t100\n1\t3\t4\n";
        match ingest_ratings(src.as_bytes()) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rating_out_of_range() {
        assert!(matches!(
            ingest_ratings("1,2,5.5,10\n".as_bytes()),
            Err(Error::Range { line: 1, .. })
        ));
        assert!(matches!(
            ingest_ratings("1,2,0,10\n".as_bytes()),
            Err(Error::Range { line: 1, .. })
        ));
    }

    #[test]
    fn delimiters_and_header() {
        let a = ingest_ratings("user,item,rating,ts\n1,2,3.5,10\n4,2,1,11\n".as_bytes()).unwrap();
        let b = ingest_ratings("1::2::3.5::10\n4::2::1::11\n".as_bytes()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 2);
        assert_eq!(a.users(), &[1, 4]);
        assert_eq!(a.items(), &[2]);
    }

    #[test]
    fn rejects_duplicates_and_garbage() {
        assert!(matches!(
            ingest_ratings("1\t2\t3\t10\n1\t2\t4\t10\n".as_bytes()),
            Err(Error::Parse { line: 2, .. })
        ));
        assert!(matches!(
            ingest_ratings("1\tx\t3\t10\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(matches!(
            ingest_ratings("1 2 3 4\n".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn index_by_first_appearance() {
        let t = ingest_ratings("9\t5\t3\t1\n2\t7\t4\t2\n9\t7\t5\t3\n".as_bytes()).unwrap();
        assert_eq!(t.user_idx(9), Some(0));
        assert_eq!(t.user_idx(2), Some(1));
        assert_eq!(t.item_idx(5), Some(0));
        assert_eq!(t.item_idx(7), Some(1));
        let triples: Vec<_> = t.indexed().collect();
        assert_eq!(triples, vec![(0, 0, 3.0), (1, 1, 4.0), (0, 1, 5.0)]);
    }

    #[test]
    fn synthetic_file_has_movielens_shape() {
        let text = synthetic_movielens_100k(1);
        let t = ingest_ratings(text.as_bytes()).unwrap();
        assert_eq!((t.len(), t.n_users(), t.n_items()), (100_000, 943, 1682));
        let mut per_user = vec![0usize; 944];
        for r in t.records() {
            per_user[r.user as usize] += 1;
        }
        assert!(per_user[1..].iter().all(|&c| c >= 20));
        assert_eq!(text, synthetic_movielens_100k(1));
    }

    fn arb_records() -> impl Strategy<Value = Vec<Rating>> {
        prop::collection::vec((0u64..30, 0u64..30, 1u8..=9, 0i64..1_000_000), 1..60).prop_map(|v| {
            let mut seen = HashSet::new();
            v.into_iter()
                .filter(|&(u, i, _, t)| seen.insert((u, i, t)))
                .map(|(user, item, half, timestamp)| Rating {
                    user,
                    item,
                    rating: 1.0 + 0.5 * (half - 1) as f64,
                    timestamp,
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn reserialize_round_trip(records in arb_records(), which in 0usize..3) {
            let delim = [Delimiter::Tab, Delimiter::Comma, Delimiter::DoubleColon][which];
            let table = RatingsTable::from_records(records).unwrap();
            let again = ingest_ratings(table.to_delimited(delim).as_bytes()).unwrap();
            prop_assert_eq!(table, again);
        }
    }
}
