//! Building evaluation fixtures from Yelp Open Dataset style dumps
//! (`business.json`, `review.json`, one JSON object per line).
//!
//! Pipeline: keep businesses whose category tags pass a [`FilterSpec`],
//! keep the latest review per (user, business), pick one review per user
//! at random, then draw `n + 1` distinct users: the first becomes the
//! one-shot prompt example, the rest the test set.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{Label, ReviewSample};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawBusiness {
    pub business_id: String,
    #[serde(default)]
    pub categories: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawReview {
    pub review_id: String,
    pub user_id: String,
    pub business_id: String,
    pub stars: f64,
    pub text: String,
    pub date: String,
}

/// Category tag filter. Tags are matched exactly (case-sensitive) against
/// the comma-split, trimmed category list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterSpec {
    pub include: Vec<String>,
    pub exclude: Vec<String>,
}

impl Default for FilterSpec {
    fn default() -> Self {
        FilterSpec {
            include: vec!["Restaurants".into()],
            exclude: ["Fast Food", "Food Trucks", "Nightlife", "Bars"].map(String::from).to_vec(),
        }
    }
}

impl FilterSpec {
    pub fn validate(&self) -> Result<()> {
        if self.include.is_empty() {
            return Err(Error::validation("filter needs at least one include tag"));
        }
        Ok(())
    }

    pub fn matches(&self, categories: Option<&str>) -> bool {
        let Some(categories) = categories else { return false };
        let tags: Vec<&str> = categories.split(',').map(str::trim).collect();
        let has = |tag: &String| tags.contains(&tag.as_str());
        self.include.iter().any(has) && !self.exclude.iter().any(has)
    }
}

/// Line counts from reading a JSON-lines file.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct LoadSummary {
    pub parsed: usize,
    pub malformed: usize,
}

/// Reads JSON lines, handing each parsed record to `sink`. Blank lines are
/// ignored; malformed ones are counted and skipped.
pub fn read_jsonl<T: DeserializeOwned>(reader: impl BufRead, mut sink: impl FnMut(T)) -> std::io::Result<LoadSummary> {
    let mut summary = LoadSummary::default();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<T>(&line) {
            Ok(record) => {
                summary.parsed += 1;
                sink(record);
            }
            Err(_) => summary.malformed += 1,
        }
    }
    Ok(summary)
}

/// Ids of businesses whose categories pass `spec`.
pub fn filter_businesses<'a>(
    businesses: impl IntoIterator<Item = &'a RawBusiness>,
    spec: &FilterSpec,
) -> Result<HashSet<String>> {
    spec.validate()?;
    Ok(businesses
        .into_iter()
        .filter(|b| !b.business_id.is_empty() && spec.matches(b.categories.as_deref()))
        .map(|b| b.business_id.clone())
        .collect())
}

/// Accepts `YYYY-MM-DD HH:MM:SS` (the Yelp dump format), RFC 3339 and
/// bare dates.
pub fn parse_review_date(s: &str) -> Option<DateTime<Utc>> {
    let s = s.trim();
    if let Ok(dt) = NaiveDateTime::parse_from_str(s, "%Y-%m-%d %H:%M:%S") {
        return Some(dt.and_utc());
    }
    if let Ok(dt) = DateTime::parse_from_rfc3339(s) {
        return Some(dt.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d").ok().map(|d| d.and_hms_opt(0, 0, 0).unwrap_or_default().and_utc())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Deduped {
    /// Sorted by (user_id, business_id).
    pub reviews: Vec<RawReview>,
    pub unparseable_dates: usize,
}

/// Restricts to `allowed` businesses and keeps the most recent review per
/// (user, business); equal dates go to the larger `review_id`.
pub fn dedupe_reviews(reviews: impl IntoIterator<Item = RawReview>, allowed: &HashSet<String>) -> Deduped {
    let mut latest: HashMap<(String, String), (DateTime<Utc>, RawReview)> = HashMap::new();
    let mut unparseable_dates = 0;
    for review in reviews {
        if !allowed.contains(&review.business_id) {
            continue;
        }
        let Some(date) = parse_review_date(&review.date) else {
            unparseable_dates += 1;
            continue;
        };
        let key = (review.user_id.clone(), review.business_id.clone());
        match latest.get(&key) {
            Some((d, kept)) if (*d, &kept.review_id) >= (date, &review.review_id) => {}
            _ => {
                latest.insert(key, (date, review));
            }
        }
    }
    let mut reviews: Vec<RawReview> = latest.into_values().map(|(_, r)| r).collect();
    reviews.sort_by(|a, b| (&a.user_id, &a.business_id).cmp(&(&b.user_id, &b.business_id)));
    Deduped { reviews, unparseable_dates }
}

/// Converts one raw review; fails on non-integral or out-of-range stars,
/// empty text or an unparseable date.
pub fn to_review_sample(raw: &RawReview) -> Result<ReviewSample> {
    if raw.stars.fract() != 0.0 || !raw.stars.is_finite() {
        return Err(Error::validation(format!("review '{}' has non-integer stars {}", raw.review_id, raw.stars)));
    }
    let stars = Label::new(raw.stars as i64)?;
    if raw.text.is_empty() {
        return Err(Error::validation(format!("review '{}' has empty text", raw.review_id)));
    }
    let posted_at = parse_review_date(&raw.date)
        .ok_or_else(|| Error::validation(format!("review '{}' has unparseable date '{}'", raw.review_id, raw.date)))?;
    Ok(ReviewSample {
        sample_id: raw.review_id.clone(),
        user_id: raw.user_id.clone(),
        business_id: raw.business_id.clone(),
        text: raw.text.clone(),
        stars,
        posted_at,
    })
}

/// Converts every candidate that can be converted; returns the number
/// rejected alongside.
pub fn convert_candidates(candidates: &[RawReview]) -> (Vec<ReviewSample>, usize) {
    let mut rejected = 0;
    let samples = candidates.iter().filter_map(|r| to_review_sample(r).map_err(|_| rejected += 1).ok()).collect();
    (samples, rejected)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fixture {
    /// Sorted by sample_id.
    pub test_set: Vec<ReviewSample>,
    pub oneshot_example: ReviewSample,
    pub sampling_seed: u64,
    pub filter_spec: FilterSpec,
}

#[derive(Serialize, Deserialize)]
struct FixtureHeader {
    kind: String,
    seed: u64,
    oneshot: ReviewSample,
    filter: FilterSpec,
}

const FIXTURE_KIND: &str = "fixture";

/// Draws a fixture from deduplicated candidates. Pure in
/// `(candidates, n, seed)`; reviews that fail conversion are skipped.
pub fn sample_fixture(candidates: &[RawReview], n: usize, seed: u64, filter_spec: FilterSpec) -> Result<Fixture> {
    let (samples, _) = convert_candidates(candidates);
    sample_from_candidates(&samples, n, seed, filter_spec)
}

pub fn sample_from_candidates(
    candidates: &[ReviewSample],
    n: usize,
    seed: u64,
    filter_spec: FilterSpec,
) -> Result<Fixture> {
    if n == 0 {
        return Err(Error::validation("fixture size must be at least 1"));
    }
    let mut by_user: BTreeMap<&str, Vec<&ReviewSample>> = BTreeMap::new();
    for s in candidates {
        by_user.entry(s.user_id.as_str()).or_default().push(s);
    }
    if by_user.len() < n + 1 {
        return Err(Error::InsufficientUsers { required: n + 1, available: by_user.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let chosen: Vec<&ReviewSample> = by_user
        .into_values()
        .map(|mut reviews| {
            reviews.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
            reviews[rng.random_range(0..reviews.len())]
        })
        .collect();
    let drawn = rand::seq::index::sample(&mut rng, chosen.len(), n + 1);
    let mut drawn = drawn.iter().map(|i| chosen[i].clone());
    let oneshot_example = drawn.next().expect("n + 1 >= 2 users drawn");
    let mut test_set: Vec<ReviewSample> = drawn.collect();
    test_set.sort_by(|a, b| a.sample_id.cmp(&b.sample_id));
    let fixture = Fixture { test_set, oneshot_example, sampling_seed: seed, filter_spec };
    fixture.validate()?;
    Ok(fixture)
}

impl Fixture {
    pub fn len(&self) -> usize {
        self.test_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.test_set.is_empty()
    }

    /// Structural checks: non-empty, one review per user, unique sample
    /// ids, non-empty texts, one-shot example held out.
    pub fn validate(&self) -> Result<()> {
        if self.test_set.is_empty() {
            return Err(Error::validation("fixture has no test samples"));
        }
        let mut users = HashSet::new();
        let mut ids = HashSet::new();
        for s in &self.test_set {
            if s.text.is_empty() {
                return Err(Error::validation(format!("sample '{}' has empty text", s.sample_id)));
            }
            if !users.insert(s.user_id.as_str()) {
                return Err(Error::validation(format!("user '{}' appears twice in the fixture", s.user_id)));
            }
            if !ids.insert(s.sample_id.as_str()) {
                return Err(Error::validation(format!("sample '{}' appears twice in the fixture", s.sample_id)));
            }
        }
        if ids.contains(self.oneshot_example.sample_id.as_str()) {
            return Err(Error::validation(format!(
                "one-shot example '{}' is also in the test set",
                self.oneshot_example.sample_id
            )));
        }
        if self.oneshot_example.text.is_empty() {
            return Err(Error::validation("one-shot example has empty text"));
        }
        Ok(())
    }

    /// Checks that every sample (and the example) belongs to an allowed
    /// business.
    pub fn validate_filter(&self, allowed: &HashSet<String>) -> Result<()> {
        for s in self.test_set.iter().chain(std::iter::once(&self.oneshot_example)) {
            if !allowed.contains(&s.business_id) {
                return Err(Error::validation(format!(
                    "sample '{}' belongs to filtered-out business '{}'",
                    s.sample_id, s.business_id
                )));
            }
        }
        Ok(())
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        let header = FixtureHeader {
            kind: FIXTURE_KIND.into(),
            seed: self.sampling_seed,
            oneshot: self.oneshot_example.clone(),
            filter: self.filter_spec.clone(),
        };
        writeln!(out, "{}", serde_json::to_string(&header)?)?;
        for s in &self.test_set {
            writeln!(out, "{}", serde_json::to_string(s)?)?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("serde_json emits UTF-8")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_jsonl()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(reader: impl BufRead, origin: &Path) -> Result<Fixture> {
        let json_err = |line, source| Error::Json { path: origin.to_path_buf(), line, source };
        let mut lines = reader.lines().enumerate();
        let header: FixtureHeader = loop {
            match lines.next() {
                None => return Err(Error::validation(format!("{}: empty fixture file", origin.display()))),
                Some((_, Err(e))) => return Err(Error::io(origin, e)),
                Some((_, Ok(l))) if l.trim().is_empty() => continue,
                Some((i, Ok(l))) => break serde_json::from_str(&l).map_err(|e| json_err(i + 1, e))?,
            }
        };
        if header.kind != FIXTURE_KIND {
            return Err(Error::validation(format!("{}: header kind is '{}'", origin.display(), header.kind)));
        }
        let mut test_set = Vec::new();
        for (i, line) in lines {
            let line = line.map_err(|e| Error::io(origin, e))?;
            if line.trim().is_empty() {
                continue;
            }
            test_set.push(serde_json::from_str(&line).map_err(|e| json_err(i + 1, e))?);
        }
        let fixture = Fixture {
            test_set,
            oneshot_example: header.oneshot,
            sampling_seed: header.seed,
            filter_spec: header.filter,
        };
        fixture.validate()?;
        Ok(fixture)
    }

    pub fn load(path: &Path) -> Result<Fixture> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), path)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    /// Population standard deviation.
    fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Summary {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// Character-count and star summaries over the test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FixtureStats {
    pub n: usize,
    pub characters: Summary,
    pub stars: Summary,
}

pub fn fixture_stats(fixture: &Fixture) -> Result<FixtureStats> {
    if fixture.is_empty() {
        return Err(Error::validation("fixture has no test samples"));
    }
    let chars: Vec<f64> = fixture.test_set.iter().map(|s| s.text.chars().count() as f64).collect();
    let stars: Vec<f64> = fixture.test_set.iter().map(|s| f64::from(s.stars.value())).collect();
    Ok(FixtureStats { n: fixture.len(), characters: Summary::of(&chars), stars: Summary::of(&stars) })
}

impl fmt::Display for FixtureStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<12}{:>10}{:>10}{:>8}{:>8}", format!("n={}", self.n), "Mean", "Std", "Min", "Max")?;
        for (name, s) in [("Characters", self.characters), ("Stars", self.stars)] {
            writeln!(f, "{name:<12}{:>10.3}{:>10.3}{:>8}{:>8}", s.mean, s.std, s.min, s.max)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PrepareConfig {
    pub business_path: PathBuf,
    pub review_path: PathBuf,
    pub n: usize,
    pub seed: u64,
    pub filter: FilterSpec,
}

#[derive(Debug, Clone)]
pub struct Prepared {
    pub fixture: Fixture,
    pub businesses: LoadSummary,
    pub reviews: LoadSummary,
    pub allowed_businesses: usize,
    pub unparseable_dates: usize,
    pub rejected_reviews: usize,
    pub candidate_users: usize,
}

impl fmt::Display for Prepared {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "businesses: {} parsed, {} malformed, {} pass the filter",
            self.businesses.parsed, self.businesses.malformed, self.allowed_businesses
        )?;
        writeln!(
            f,
            "reviews: {} parsed, {} malformed, {} unparseable dates, {} rejected",
            self.reviews.parsed, self.reviews.malformed, self.unparseable_dates, self.rejected_reviews
        )?;
        writeln!(
            f,
            "fixture: {} samples from {} candidate users (seed {})",
            self.fixture.len(),
            self.candidate_users,
            self.fixture.sampling_seed
        )
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Error::io(path, e))
}

/// Runs the whole ingest pipeline over the two dump files.
pub fn prepare(config: &PrepareConfig) -> Result<Prepared> {
    config.filter.validate()?;
    let mut businesses = Vec::new();
    let business_summary = read_jsonl(open(&config.business_path)?, |b: RawBusiness| businesses.push(b))
        .map_err(|e| Error::io(&config.business_path, e))?;
    let allowed = filter_businesses(&businesses, &config.filter)?;
    drop(businesses);

    let mut reviews = Vec::new();
    let review_summary = read_jsonl(open(&config.review_path)?, |r: RawReview| {
        if allowed.contains(&r.business_id) {
            reviews.push(r);
        }
    })
    .map_err(|e| Error::io(&config.review_path, e))?;
    let deduped = dedupe_reviews(reviews, &allowed);
    let (candidates, rejected_reviews) = convert_candidates(&deduped.reviews);
    let candidate_users = candidates.iter().map(|s| s.user_id.as_str()).collect::<HashSet<_>>().len();
    let fixture = sample_from_candidates(&candidates, config.n, config.seed, config.filter.clone())?;
    fixture.validate_filter(&allowed)?;
    Ok(Prepared {
        fixture,
        businesses: business_summary,
        reviews: review_summary,
        allowed_businesses: allowed.len(),
        unparseable_dates: deduped.unparseable_dates,
        rejected_reviews,
        candidate_users,
    })
}
