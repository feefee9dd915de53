//! MovieLens ingestion, binarization, splitting and sign-accuracy evaluation.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::matrix::{DenseMatrix, Sign, TernaryObservation};
use crate::qpf::Qpf;
use crate::rng::{substream, Phase};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RatingRecord {
    /// 1-based user id.
    pub user: u32,
    /// 1-based item id.
    pub item: u32,
    pub rating: u8,
    pub timestamp: u64,
}

impl RatingRecord {
    /// Zero-based matrix cell.
    pub fn cell(&self) -> (usize, usize) {
        (self.user as usize - 1, self.item as usize - 1)
    }
}

/// Parses tab-separated `user item rating timestamp` lines. Blank lines are skipped.
pub fn parse_movielens(reader: impl BufRead) -> Result<Vec<RatingRecord>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let err = |reason: String| Error::Parse { line: line_no, reason };
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 4 {
            return Err(err(format!("expected 4 tab-separated fields, found {}", fields.len())));
        }
        let user: u32 = fields[0].parse().map_err(|e| err(format!("user id: {e}")))?;
        let item: u32 = fields[1].parse().map_err(|e| err(format!("item id: {e}")))?;
        let rating: u8 = fields[2].parse().map_err(|e| err(format!("rating: {e}")))?;
        let timestamp: u64 = fields[3].parse().map_err(|e| err(format!("timestamp: {e}")))?;
        if user == 0 || item == 0 {
            return Err(err("ids are 1-based".into()));
        }
        if !(1..=5).contains(&rating) {
            return Err(err(format!("rating {rating} is outside 1..=5")));
        }
        out.push(RatingRecord { user, item, rating, timestamp });
    }
    Ok(out)
}

pub fn read_movielens(path: &Path) -> Result<Vec<RatingRecord>> {
    let file = File::open(path)
        .map_err(|e| Error::from(e).context(format!("opening {}", path.display())))?;
    parse_movielens(BufReader::new(file))
        .map_err(|e| e.context(format!("parsing {}", path.display())))
}

/// Drops repeated `(user, item)` pairs, keeping the last occurrence in its position.
pub fn dedup_keep_last(records: &[RatingRecord]) -> Vec<RatingRecord> {
    let mut last: HashMap<(u32, u32), usize> = HashMap::with_capacity(records.len());
    for (idx, r) in records.iter().enumerate() {
        last.insert((r.user, r.item), idx);
    }
    records
        .iter()
        .enumerate()
        .filter(|(idx, r)| last[&(r.user, r.item)] == *idx)
        .map(|(_, r)| *r)
        .collect()
}

/// Matrix shape covering every id: `(max user, max item)`.
pub fn infer_dims(records: &[RatingRecord]) -> (usize, usize) {
    records.iter().fold((0, 0), |(d1, d2), r| {
        (d1.max(r.user as usize), d2.max(r.item as usize))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// Mean of all ratings.
    Auto,
    Fixed(f64),
}

impl Threshold {
    pub fn resolve(self, records: &[RatingRecord]) -> Result<f64> {
        match self {
            Threshold::Fixed(t) if t.is_finite() => Ok(t),
            Threshold::Fixed(t) => Err(Error::invalid("threshold", format!("{t} is not finite"))),
            Threshold::Auto => {
                if records.is_empty() {
                    return Err(Error::invalid("records", "cannot average an empty rating set"));
                }
                let sum: u64 = records.iter().map(|r| r.rating as u64).sum();
                Ok(sum as f64 / records.len() as f64)
            }
        }
    }
}

/// `+1` when `rating > threshold`, else `-1`.
pub fn binarize_rating(rating: u8, threshold: f64) -> Sign {
    if rating as f64 > threshold {
        Sign::Positive
    } else {
        Sign::Negative
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Binarized {
    pub observation: TernaryObservation,
    /// Original rating for each entry of `observation.entries()`.
    pub ratings: Vec<u8>,
    pub threshold: f64,
}

/// Builds the observation matrix from ratings. `dims` defaults to the largest ids.
pub fn binarize(
    records: &[RatingRecord],
    threshold: Threshold,
    dims: Option<(usize, usize)>,
) -> Result<Binarized> {
    if records.is_empty() {
        return Err(Error::invalid("records", "nothing to binarize"));
    }
    let threshold = threshold.resolve(records)?;
    let (d1, d2) = dims.unwrap_or_else(|| infer_dims(records));
    let mut cells: Vec<(usize, usize, u8)> = dedup_keep_last(records)
        .iter()
        .map(|r| {
            let (i, j) = r.cell();
            (i, j, r.rating)
        })
        .collect();
    cells.sort_unstable_by_key(|&(i, j, _)| (i, j));
    let entries = cells.iter().map(|&(i, j, r)| (i, j, binarize_rating(r, threshold))).collect();
    Ok(Binarized {
        observation: TernaryObservation::new(d1, d2, entries)?,
        ratings: cells.iter().map(|c| c.2).collect(),
        threshold,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitSpec {
    pub n_validation: usize,
    pub n_test: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<RatingRecord>,
    pub validation: Vec<RatingRecord>,
    pub test: Vec<RatingRecord>,
}

/// Seeded uniform partition. Each part keeps the input order.
pub fn split(records: &[RatingRecord], spec: SplitSpec) -> Result<Split> {
    let held = spec.n_validation + spec.n_test;
    if held >= records.len() {
        return Err(Error::invalid(
            "split",
            format!("{held} held-out records leave no training data out of {}", records.len()),
        ));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut substream(spec.seed, Phase::Split, 0));
    let mut part = vec![0u8; records.len()];
    for &idx in &order[..spec.n_validation] {
        part[idx] = 1;
    }
    for &idx in &order[spec.n_validation..held] {
        part[idx] = 2;
    }
    let pick = |p: u8| records.iter().zip(&part).filter(|(_, &q)| q == p).map(|(r, _)| *r).collect();
    Ok(Split { train: pick(0), validation: pick(1), test: pick(2) })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BucketError {
    pub count: usize,
    pub errors: usize,
}

impl BucketError {
    /// Misclassification rate; `None` for an empty bucket.
    pub fn rate(&self) -> Option<f64> {
        (self.count > 0).then(|| self.errors as f64 / self.count as f64)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AccuracyReport {
    /// Buckets for original ratings 1 through 5.
    pub per_rating: [BucketError; 5],
    pub overall: BucketError,
}

impl AccuracyReport {
    pub fn overall_rate(&self) -> f64 {
        self.overall.rate().expect("held-out set is nonempty")
    }

    pub fn rating_rate(&self, rating: u8) -> Option<f64> {
        self.per_rating[rating as usize - 1].rate()
    }

    /// CSV with header `rating,count,error` and a final `overall` row.
    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "rating,count,error")?;
        let fmt = |b: &BucketError| b.rate().map_or_else(|| "nan".to_string(), |r| r.to_string());
        for (idx, b) in self.per_rating.iter().enumerate() {
            writeln!(w, "{},{},{}", idx + 1, b.count, fmt(b))?;
        }
        writeln!(w, "overall,{},{}", self.overall.count, fmt(&self.overall))?;
        Ok(())
    }
}

/// Predicted sign of an estimate entry: `+1` iff `f(x - offset) >= 1/2`.
pub fn predict_sign(q: &Qpf, x: f64, offset: f64) -> Sign {
    if q.value(x - offset) >= 0.5 {
        Sign::Positive
    } else {
        Sign::Negative
    }
}

/// Misclassification rates of `estimate` on held-out ratings, per original
/// rating and overall.
pub fn sign_accuracy(
    estimate: &DenseMatrix,
    heldout: &[RatingRecord],
    threshold: f64,
    q: &Qpf,
    offset: f64,
) -> Result<AccuracyReport> {
    if heldout.is_empty() {
        return Err(Error::EmptyHeldOut);
    }
    let (d1, d2) = estimate.shape();
    let mut per_rating = [BucketError { count: 0, errors: 0 }; 5];
    for r in heldout {
        let (i, j) = r.cell();
        if i >= d1 || j >= d2 {
            return Err(Error::IndexOutOfRange { row: i, col: j, d1, d2 });
        }
        let bucket = &mut per_rating[r.rating as usize - 1];
        bucket.count += 1;
        if predict_sign(q, estimate.get(i, j), offset) != binarize_rating(r.rating, threshold) {
            bucket.errors += 1;
        }
    }
    let overall = per_rating.iter().fold(BucketError { count: 0, errors: 0 }, |acc, b| {
        BucketError { count: acc.count + b.count, errors: acc.errors + b.errors }
    });
    Ok(AccuracyReport { per_rating, overall })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(user: u32, item: u32, rating: u8) -> RatingRecord {
        RatingRecord { user, item, rating, timestamp: 0 }
    }

    #[test]
    fn parses_documented_layout() {
        let r = parse_movielens("196\t242\t3\t881250949\n".as_bytes()).unwrap();
        assert_eq!(r, vec![RatingRecord { user: 196, item: 242, rating: 3, timestamp: 881250949 }]);
        assert!(parse_movielens("".as_bytes()).unwrap().is_empty());
    }

    #[test]
    fn parse_errors_name_the_line() {
        let raw = "1\t1\t4\t0\n\n2\t3\t6\t0\n";
        match parse_movielens(raw.as_bytes()) {
            Err(Error::Parse { line, reason }) => {
                assert_eq!(line, 3);
                assert!(reason.contains('6'));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(parse_movielens("1\t2\t3\n".as_bytes()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn binarization_rule() {
        assert_eq!(binarize_rating(3, 3.5), Sign::Negative);
        assert_eq!(binarize_rating(4, 3.5), Sign::Positive);
        let b = binarize(&[rec(1, 1, 2), rec(1, 2, 5)], Threshold::Auto, None).unwrap();
        assert_eq!(b.threshold, 3.5);
        assert_eq!(b.observation.shape(), (1, 2));
        assert_eq!(b.observation.entries(), &[(0, 0, Sign::Negative), (0, 1, Sign::Positive)]);
        assert_eq!(b.ratings, vec![2, 5]);
    }

    #[test]
    fn duplicates_keep_last() {
        let recs = [rec(1, 1, 5), rec(2, 1, 1), rec(1, 1, 1)];
        assert_eq!(dedup_keep_last(&recs), vec![rec(2, 1, 1), rec(1, 1, 1)]);
        let b = binarize(&recs, Threshold::Fixed(3.0), Some((3, 3))).unwrap();
        assert_eq!(b.observation.entries(), &[(0, 0, Sign::Negative), (1, 0, Sign::Negative)]);
    }

    #[test]
    fn split_sizes_and_determinism() {
        let recs: Vec<_> = (1..=100).map(|u| rec(u, 1, 3)).collect();
        let spec = SplitSpec { n_validation: 10, n_test: 5, seed: 9 };
        let s = split(&recs, spec).unwrap();
        assert_eq!((s.train.len(), s.validation.len(), s.test.len()), (85, 10, 5));
        assert_eq!(s, split(&recs, spec).unwrap());
        let mut all: Vec<_> = s.train.iter().chain(&s.validation).chain(&s.test).map(|r| r.user).collect();
        all.sort();
        assert_eq!(all, (1..=100).collect::<Vec<_>>());

        let none = split(&recs, SplitSpec { n_validation: 0, n_test: 0, seed: 1 }).unwrap();
        assert_eq!(none.train, recs);
        assert!(split(&recs, SplitSpec { n_validation: 50, n_test: 50, seed: 1 }).is_err());
    }

    #[test]
    fn accuracy_examples() {
        let q = Qpf::Logistic;
        let held = [rec(1, 1, 5), rec(1, 2, 4), rec(2, 1, 1), rec(2, 2, 2)];
        let x = DenseMatrix::filled(2, 2, 100.0);
        let all_pos = sign_accuracy(&x, &held[..2], 3.5, &q, 0.0).unwrap();
        assert_eq!(all_pos.overall_rate(), 0.0);
        assert_eq!(all_pos.rating_rate(1), None);

        let zero = DenseMatrix::zeros(2, 2);
        let r = sign_accuracy(&zero, &held, 3.5, &q, 0.0).unwrap();
        assert_eq!(r.overall_rate(), 0.5);
        assert_eq!(r.rating_rate(1), Some(1.0));
        assert_eq!(r.rating_rate(5), Some(0.0));

        assert!(matches!(sign_accuracy(&zero, &[], 3.5, &q, 0.0), Err(Error::EmptyHeldOut)));
        assert!(sign_accuracy(&zero, &[rec(3, 1, 2)], 3.5, &q, 0.0).is_err());
    }

    #[test]
    fn accuracy_csv_layout() {
        let held = [rec(1, 1, 5), rec(1, 2, 1)];
        let r = sign_accuracy(&DenseMatrix::zeros(1, 2), &held, 3.5, &Qpf::Logistic, 0.0).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "rating,count,error");
        assert_eq!(lines[1], "1,1,1");
        assert_eq!(lines[2], "2,0,nan");
        assert_eq!(lines[6], "overall,2,0.5");
    }
}
