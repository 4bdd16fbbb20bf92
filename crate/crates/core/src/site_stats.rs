//! Per-site popularity tables and per-user dwell times.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use chrono::{DateTime, Datelike, NaiveDate, Utc};
use serde::Serialize;

use crate::geofence::{AssignedPhoto, SiteCatalog};

/// Photo counts per (site, calendar year).
///
/// Years form the contiguous range between the earliest and latest year in
/// the data, so quiet years appear as zero rows.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SiteYearCounts {
    pub sites: Vec<String>,
    pub years: Vec<i32>,
    /// `counts[site][year]`, indexed like `sites` and `years`.
    pub counts: Vec<Vec<u64>>,
}

impl SiteYearCounts {
    pub fn get(&self, site_id: &str, year: i32) -> u64 {
        let (Some(s), Some(y)) = (
            self.sites.iter().position(|x| x == site_id),
            self.years.iter().position(|&x| x == year),
        ) else {
            return 0;
        };
        self.counts[s][y]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn year_total(&self, year_idx: usize) -> u64 {
        self.counts.iter().map(|row| row[year_idx]).sum()
    }

    /// Reorders rows to catalog order, adding all-zero rows for catalog sites
    /// without photos. Sites outside the catalog are kept at the end.
    pub fn aligned_to(&self, catalog: &SiteCatalog) -> SiteYearCounts {
        let mut sites = catalog.site_ids();
        for s in &self.sites {
            if !sites.contains(s) {
                sites.push(s.clone());
            }
        }
        let counts = sites
            .iter()
            .map(|s| match self.sites.iter().position(|x| x == s) {
                Some(i) => self.counts[i].clone(),
                None => vec![0; self.years.len()],
            })
            .collect();
        SiteYearCounts { sites, years: self.years.clone(), counts }
    }
}

pub fn photos_per_site_year(assigned: &[AssignedPhoto]) -> SiteYearCounts {
    let mut cells: BTreeMap<&str, BTreeMap<i32, u64>> = BTreeMap::new();
    for a in assigned {
        *cells.entry(&a.site_id).or_default().entry(a.photo.timestamp.year()).or_default() += 1;
    }
    let years: BTreeSet<i32> = cells.values().flat_map(|m| m.keys().copied()).collect();
    let (Some(&lo), Some(&hi)) = (years.first(), years.last()) else {
        return SiteYearCounts::default();
    };
    let years: Vec<i32> = (lo..=hi).collect();
    let sites = cells.keys().map(|s| s.to_string()).collect();
    let counts = cells
        .values()
        .map(|m| years.iter().map(|y| m.get(y).copied().unwrap_or(0)).collect())
        .collect();
    SiteYearCounts { sites, years, counts }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct PopularityRow {
    pub site_id: String,
    pub n_photos: u64,
    pub n_unique_visitors: u64,
    pub rank: usize,
}

/// One row per site seen in `assigned`, ranked by unique visitors, then
/// photos (both descending), then site id.
pub fn popularity_table(assigned: &[AssignedPhoto]) -> Vec<PopularityRow> {
    rank_rows(tally(assigned))
}

/// Like [`popularity_table`], but every catalog site gets a row, even with
/// zero photos.
pub fn popularity_table_with_catalog(assigned: &[AssignedPhoto], catalog: &SiteCatalog) -> Vec<PopularityRow> {
    let mut rows = tally(assigned);
    for id in catalog.site_ids() {
        rows.entry(id).or_insert((0, 0));
    }
    rank_rows(rows)
}

fn tally(assigned: &[AssignedPhoto]) -> BTreeMap<String, (u64, u64)> {
    let mut photos: BTreeMap<&str, u64> = BTreeMap::new();
    let mut users: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
    for a in assigned {
        *photos.entry(&a.site_id).or_default() += 1;
        users.entry(&a.site_id).or_default().insert(&a.photo.user_id);
    }
    photos
        .into_iter()
        .map(|(site, n)| (site.to_owned(), (n, users[site].len() as u64)))
        .collect()
}

fn rank_rows(rows: BTreeMap<String, (u64, u64)>) -> Vec<PopularityRow> {
    let mut rows: Vec<PopularityRow> = rows
        .into_iter()
        .map(|(site_id, (n_photos, n_unique_visitors))| PopularityRow { site_id, n_photos, n_unique_visitors, rank: 0 })
        .collect();
    rows.sort_by(|a, b| {
        b.n_unique_visitors
            .cmp(&a.n_unique_visitors)
            .then(b.n_photos.cmp(&a.n_photos))
            .then_with(|| a.site_id.cmp(&b.site_id))
    });
    for (i, row) in rows.iter_mut().enumerate() {
        row.rank = i + 1;
    }
    rows
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DwellRecord {
    pub user_id: String,
    pub site_id: String,
    /// Set only in [`DwellMode::PerDay`].
    pub day: Option<NaiveDate>,
    pub first_ts: DateTime<Utc>,
    pub last_ts: DateTime<Utc>,
    pub duration_s: i64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DwellMode {
    /// One record per (user, site): earliest to latest photo over the whole album.
    #[default]
    Merged,
    /// One record per (user, site, UTC calendar day).
    PerDay,
}

pub fn dwell_times(assigned: &[AssignedPhoto]) -> Vec<DwellRecord> {
    dwell_times_with_mode(assigned, DwellMode::Merged)
}

/// Records are sorted by (user, site, day).
pub fn dwell_times_with_mode(assigned: &[AssignedPhoto], mode: DwellMode) -> Vec<DwellRecord> {
    type Key<'a> = (&'a str, &'a str, Option<NaiveDate>);
    let mut spans: BTreeMap<Key<'_>, (DateTime<Utc>, DateTime<Utc>)> = BTreeMap::new();
    for a in assigned {
        let ts = a.photo.timestamp;
        let day = match mode {
            DwellMode::Merged => None,
            DwellMode::PerDay => Some(ts.date_naive()),
        };
        spans
            .entry((&a.photo.user_id, &a.site_id, day))
            .and_modify(|(lo, hi)| {
                *lo = (*lo).min(ts);
                *hi = (*hi).max(ts);
            })
            .or_insert((ts, ts));
    }
    spans
        .into_iter()
        .map(|((user, site, day), (first_ts, last_ts))| DwellRecord {
            user_id: user.to_owned(),
            site_id: site.to_owned(),
            day,
            first_ts,
            last_ts,
            duration_s: (last_ts - first_ts).num_seconds(),
        })
        .collect()
}

pub fn mean_dwell_per_site(dwells: &[DwellRecord]) -> BTreeMap<String, f64> {
    let mut acc: HashMap<&str, (f64, usize)> = HashMap::new();
    for d in dwells {
        let e = acc.entry(&d.site_id).or_default();
        e.0 += d.duration_s as f64;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(site, (sum, n))| (site.to_owned(), sum / n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingestion::PhotoRecord;
    use chrono::TimeZone;
    use proptest::prelude::*;

    fn photo(id: &str, user: &str, site: &str, ts: DateTime<Utc>) -> AssignedPhoto {
        AssignedPhoto {
            photo: PhotoRecord {
                photo_id: id.into(),
                user_id: user.into(),
                lat: 0.0,
                lon: 0.0,
                timestamp: ts,
                url: None,
            },
            site_id: site.into(),
        }
    }

    fn at(y: i32, m: u32, d: u32, h: u32, min: u32) -> DateTime<Utc> {
        Utc.with_ymd_and_hms(y, m, d, h, min, 0).unwrap()
    }

    #[test]
    fn site_year_counts() {
        let input = vec![
            photo("1", "u", "A", at(2013, 1, 1, 0, 0)),
            photo("2", "u", "A", at(2013, 5, 1, 0, 0)),
            photo("3", "v", "A", at(2013, 12, 31, 23, 59)),
            photo("4", "v", "A", at(2014, 1, 1, 0, 0)),
        ];
        let t = photos_per_site_year(&input);
        assert_eq!(t.years, vec![2013, 2014]);
        assert_eq!(t.get("A", 2013), 3);
        assert_eq!(t.get("A", 2014), 1);
        assert_eq!(t.total(), 4);
        assert_eq!(photos_per_site_year(&[]), SiteYearCounts::default());
    }

    #[test]
    fn year_range_is_contiguous() {
        let input = vec![photo("1", "u", "A", at(2004, 1, 1, 0, 0)), photo("2", "u", "B", at(2007, 1, 1, 0, 0))];
        let t = photos_per_site_year(&input);
        assert_eq!(t.years, vec![2004, 2005, 2006, 2007]);
        assert_eq!(t.counts, vec![vec![1, 0, 0, 0], vec![0, 0, 0, 1]]);
    }

    #[test]
    fn visitors_outrank_photos() {
        let mut input = Vec::new();
        for i in 0..10 {
            input.push(photo(&format!("a{i}"), &format!("u{}", i % 3), "A", at(2013, 1, 1, 0, 0)));
        }
        for i in 0..5 {
            input.push(photo(&format!("b{i}"), &format!("u{}", i % 4), "B", at(2013, 1, 1, 0, 0)));
        }
        let rows = popularity_table(&input);
        assert_eq!(rows[0].site_id, "B");
        assert_eq!((rows[0].n_photos, rows[0].n_unique_visitors, rows[0].rank), (5, 4, 1));
        assert_eq!((rows[1].site_id.as_str(), rows[1].rank), ("A", 2));
    }

    #[test]
    fn single_site_is_rank_one() {
        let rows = popularity_table(&[photo("1", "u", "A", at(2013, 1, 1, 0, 0))]);
        assert_eq!(rows.len(), 1);
        assert_eq!(rows[0].rank, 1);
    }

    #[test]
    fn dwell_examples() {
        let d = dwell_times(&[photo("1", "u", "A", at(2013, 1, 1, 10, 0)), photo("2", "u", "A", at(2013, 1, 1, 12, 30))]);
        assert_eq!(d[0].duration_s, 9000);

        let d = dwell_times(&[photo("1", "u", "A", at(2013, 1, 1, 10, 0))]);
        assert_eq!(d[0].duration_s, 0);

        let d = dwell_times(&[
            photo("1", "u", "A", at(2013, 1, 1, 9, 0)),
            photo("2", "u", "A", at(2013, 1, 1, 11, 0)),
            photo("3", "u", "A", at(2013, 1, 1, 10, 0)),
        ]);
        assert_eq!(d[0].duration_s, 7200);
    }

    #[test]
    fn per_day_mode_splits_revisits() {
        let input = [
            photo("1", "u", "A", at(2013, 1, 1, 10, 0)),
            photo("2", "u", "A", at(2013, 1, 1, 11, 0)),
            photo("3", "u", "A", at(2013, 1, 3, 10, 0)),
        ];
        assert_eq!(dwell_times(&input)[0].duration_s, 2 * 86400);
        let split = dwell_times_with_mode(&input, DwellMode::PerDay);
        assert_eq!(split.iter().map(|d| d.duration_s).collect::<Vec<_>>(), vec![3600, 0]);
    }

    #[test]
    fn mean_dwell_examples() {
        let mk = |site: &str, s: i64| DwellRecord {
            user_id: "u".into(),
            site_id: site.into(),
            day: None,
            first_ts: at(2013, 1, 1, 0, 0),
            last_ts: at(2013, 1, 1, 0, 0) + chrono::Duration::seconds(s),
            duration_s: s,
        };
        let m = mean_dwell_per_site(&[mk("A", 3600), mk("A", 7200), mk("B", 0)]);
        assert_eq!(m["A"], 5400.0);
        assert_eq!(m["B"], 0.0);
        assert!(!m.contains_key("C"));
    }

    fn arb_assigned() -> impl Strategy<Value = Vec<AssignedPhoto>> {
        prop::collection::vec((0u8..4, 0u8..3, 0i64..400_000_000), 0..60).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (u, s, t))| {
                    let ts = at(2004, 1, 1, 0, 0) + chrono::Duration::seconds(t);
                    photo(&format!("p{i}"), &format!("u{u}"), &format!("S{s}"), ts)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn site_year_total_equals_input_len(input in arb_assigned()) {
            prop_assert_eq!(photos_per_site_year(&input).total(), input.len() as u64);
        }

        #[test]
        fn ranks_are_a_permutation(input in arb_assigned()) {
            let mut ranks: Vec<usize> = popularity_table(&input).iter().map(|r| r.rank).collect();
            ranks.sort_unstable();
            prop_assert_eq!(ranks, (1..=popularity_table(&input).len()).collect::<Vec<_>>());
        }

        #[test]
        fn dwell_is_order_invariant_and_bounded(input in arb_assigned(), seed in any::<u64>()) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let base = dwell_times(&input);
            let mut shuffled = input.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            prop_assert_eq!(&base, &dwell_times(&shuffled));
            for d in &base {
                prop_assert!(d.duration_s >= 0);
                let album: Vec<_> = input.iter().filter(|a| a.photo.user_id == d.user_id).map(|a| a.photo.timestamp).collect();
                let span = *album.iter().max().unwrap() - *album.iter().min().unwrap();
                prop_assert!(d.duration_s <= span.num_seconds());
            }
        }
    }
}
