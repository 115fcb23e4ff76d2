use std::collections::HashMap;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use super::ReturnPanel;
use crate::error::{Error, Result};

/// One row of the membership file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MembershipRecord {
    pub continent: String,
    pub country: String,
    pub sector: Option<String>,
}

/// Asset labels keyed by asset id, as read from a membership CSV.
#[derive(Debug, Clone, Default)]
pub struct Membership {
    records: HashMap<String, MembershipRecord>,
}

impl Membership {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, asset_id: impl Into<String>, record: MembershipRecord) {
        self.records.insert(asset_id.into(), record);
    }

    pub fn get(&self, asset_id: &str) -> Option<&MembershipRecord> {
        self.records.get(asset_id)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(file, &path.display().to_string())
    }

    /// Parses `asset_id,continent,country,sector`; sector may be empty.
    pub fn read<R: Read>(reader: R, context: &str) -> Result<Self> {
        let malformed = |message: String| Error::MalformedCsv {
            context: context.to_string(),
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr.headers().map_err(|e| malformed(e.to_string()))?;
        let expected = ["asset_id", "continent", "country", "sector"];
        if headers.len() != 4 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(malformed(format!(
                "expected header `{}`",
                expected.join(",")
            )));
        }
        let mut out = Membership::new();
        for (line, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| malformed(e.to_string()))?;
            let row = line + 2;
            if record[0].is_empty() || record[1].is_empty() || record[2].is_empty() {
                return Err(malformed(format!(
                    "row {row}: asset_id, continent and country are required"
                )));
            }
            let sector = (!record[3].is_empty()).then(|| record[3].to_string());
            if out.records.contains_key(&record[0]) {
                return Err(malformed(format!(
                    "row {row}: duplicate asset `{}`",
                    &record[0]
                )));
            }
            out.insert(
                &record[0],
                MembershipRecord {
                    continent: record[1].to_string(),
                    country: record[2].to_string(),
                    sector,
                },
            );
        }
        Ok(out)
    }
}

/// Continent, country and (optional) sector memberships aligned with a
/// panel's asset order. Group ids are dense indices into the name tables,
/// numbered by first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupHierarchy {
    continent_of: Vec<usize>,
    country_of: Vec<usize>,
    sector_of: Option<Vec<usize>>,
    continent_names: Vec<String>,
    country_names: Vec<String>,
    sector_names: Vec<String>,
    close_offsets: Option<Vec<f64>>,
}

impl GroupHierarchy {
    /// Builds a hierarchy from per-asset group labels.
    ///
    /// Fails if a country appears under two continents.
    pub fn from_labels(
        continents: &[&str],
        countries: &[&str],
        sectors: Option<&[&str]>,
    ) -> Result<Self> {
        let p = continents.len();
        if countries.len() != p || sectors.is_some_and(|s| s.len() != p) {
            return Err(Error::DimensionMismatch(
                "label vectors have different lengths".into(),
            ));
        }
        if p == 0 {
            return Err(Error::NoAssets);
        }
        let (continent_of, continent_names) = intern(continents);
        let (country_of, country_names) = intern(countries);
        let (sector_of, sector_names) = match sectors {
            Some(s) => {
                let (ids, names) = intern(s);
                (Some(ids), names)
            }
            None => (None, Vec::new()),
        };
        let mut home = vec![None; country_names.len()];
        for i in 0..p {
            match home[country_of[i]] {
                None => home[country_of[i]] = Some(continent_of[i]),
                Some(c) if c != continent_of[i] => {
                    return Err(Error::InconsistentHierarchy(format!(
                        "country `{}` appears in continents `{}` and `{}`",
                        country_names[country_of[i]],
                        continent_names[c],
                        continent_names[continent_of[i]]
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(GroupHierarchy {
            continent_of,
            country_of,
            sector_of,
            continent_names,
            country_names,
            sector_names,
            close_offsets: None,
        })
    }

    /// Resolves labels for every asset of `panel`. Sectors are kept only when
    /// every asset has one.
    pub fn for_panel(panel: &ReturnPanel, membership: &Membership) -> Result<Self> {
        let mut records = Vec::with_capacity(panel.n_assets());
        for id in panel.asset_ids() {
            records.push(
                membership
                    .get(id)
                    .ok_or_else(|| Error::UnknownAsset(id.clone()))?,
            );
        }
        let continents: Vec<&str> = records.iter().map(|r| r.continent.as_str()).collect();
        let countries: Vec<&str> = records.iter().map(|r| r.country.as_str()).collect();
        let sectors: Option<Vec<&str>> = records.iter().map(|r| r.sector.as_deref()).collect();
        Self::from_labels(&continents, &countries, sectors.as_deref())
    }

    /// Canonical layout with `countries_per_continent[s]` countries of the
    /// given sizes, listed continent by continent.
    pub fn uniform(
        n_continents: usize,
        countries_per_continent: usize,
        country_size: usize,
    ) -> Result<Self> {
        if n_continents == 0 || countries_per_continent == 0 || country_size == 0 {
            return Err(Error::InvalidArgument(
                "continents, countries and country size must be positive".into(),
            ));
        }
        let mut continents = Vec::new();
        let mut countries = Vec::new();
        for s in 0..n_continents {
            for l in 0..countries_per_continent {
                for _ in 0..country_size {
                    continents.push(format!("C{s}"));
                    countries.push(format!("C{s}L{l}"));
                }
            }
        }
        let c: Vec<&str> = continents.iter().map(String::as_str).collect();
        let l: Vec<&str> = countries.iter().map(String::as_str).collect();
        Self::from_labels(&c, &l, None)
    }

    /// Attaches market-close offsets, one per continent, each in `[0, 1)`.
    pub fn with_close_offsets(mut self, offsets: Vec<f64>) -> Result<Self> {
        if offsets.len() != self.n_continents() {
            return Err(Error::DimensionMismatch(format!(
                "{} close offsets for {} continents",
                offsets.len(),
                self.n_continents()
            )));
        }
        if offsets.iter().any(|o| !(0.0..1.0).contains(o)) {
            return Err(Error::InvalidArgument(
                "close offsets must lie in [0, 1)".into(),
            ));
        }
        self.close_offsets = Some(offsets);
        Ok(self)
    }

    /// Replaces sector labels (one per asset).
    pub fn with_sectors(mut self, sectors: &[&str]) -> Result<Self> {
        if sectors.len() != self.n_assets() {
            return Err(Error::DimensionMismatch(
                "one sector label per asset required".into(),
            ));
        }
        let (ids, names) = intern(sectors);
        self.sector_of = Some(ids);
        self.sector_names = names;
        Ok(self)
    }

    pub fn n_assets(&self) -> usize {
        self.continent_of.len()
    }

    pub fn n_continents(&self) -> usize {
        self.continent_names.len()
    }

    pub fn n_countries(&self) -> usize {
        self.country_names.len()
    }

    pub fn continent_of(&self) -> &[usize] {
        &self.continent_of
    }

    pub fn country_of(&self) -> &[usize] {
        &self.country_of
    }

    pub fn sector_of(&self) -> Option<&[usize]> {
        self.sector_of.as_deref()
    }

    pub fn continent_names(&self) -> &[String] {
        &self.continent_names
    }

    pub fn country_names(&self) -> &[String] {
        &self.country_names
    }

    pub fn sector_names(&self) -> &[String] {
        &self.sector_names
    }

    pub fn close_offsets(&self) -> Option<&[f64]> {
        self.close_offsets.as_deref()
    }

    /// True when countries are contiguous within contiguous continents and
    /// group ids increase along the asset order.
    pub fn is_canonical(&self) -> bool {
        let nondecreasing = |v: &[usize]| v.windows(2).all(|w| w[0] <= w[1]);
        nondecreasing(&self.continent_of) && nondecreasing(&self.country_of)
    }

    fn require_canonical(&self) -> Result<()> {
        if self.is_canonical() {
            Ok(())
        } else {
            Err(Error::InconsistentHierarchy(
                "assets are not in canonical (continent, country) order".into(),
            ))
        }
    }

    /// Asset ranges of each continent. Requires canonical order.
    pub fn continent_ranges(&self) -> Result<Vec<Range<usize>>> {
        self.require_canonical()?;
        Ok(runs(&self.continent_of))
    }

    /// Asset ranges of each country. Requires canonical order.
    pub fn country_ranges(&self) -> Result<Vec<Range<usize>>> {
        self.require_canonical()?;
        Ok(runs(&self.country_of))
    }

    /// Hierarchy of the assets in `range`, with ids renumbered from zero.
    pub fn subset(&self, range: Range<usize>) -> Result<Self> {
        let names = |ids: &[usize], table: &[String]| -> Vec<String> {
            ids[range.clone()]
                .iter()
                .map(|&i| table[i].clone())
                .collect()
        };
        let continents = names(&self.continent_of, &self.continent_names);
        let countries = names(&self.country_of, &self.country_names);
        let sectors = self
            .sector_of
            .as_ref()
            .map(|s| names(s, &self.sector_names));
        let c: Vec<&str> = continents.iter().map(String::as_str).collect();
        let l: Vec<&str> = countries.iter().map(String::as_str).collect();
        let s: Option<Vec<&str>> = sectors
            .as_ref()
            .map(|v| v.iter().map(String::as_str).collect());
        Self::from_labels(&c, &l, s.as_deref())
    }

    fn permuted(&self, order: &[usize]) -> Self {
        let c: Vec<&str> = order
            .iter()
            .map(|&i| self.continent_names[self.continent_of[i]].as_str())
            .collect();
        let l: Vec<&str> = order
            .iter()
            .map(|&i| self.country_names[self.country_of[i]].as_str())
            .collect();
        let s: Option<Vec<&str>> = self.sector_of.as_ref().map(|s| {
            order
                .iter()
                .map(|&i| self.sector_names[s[i]].as_str())
                .collect()
        });
        let mut out =
            Self::from_labels(&c, &l, s.as_deref()).expect("permutation preserves consistency");
        // continent numbering follows first appearance, so offsets must follow it too
        out.close_offsets = self.close_offsets.as_ref().map(|offsets| {
            out.continent_names
                .iter()
                .map(|name| {
                    let old = self.continent_names.iter().position(|n| n == name).unwrap();
                    offsets[old]
                })
                .collect()
        });
        out
    }
}

fn intern(labels: &[&str]) -> (Vec<usize>, Vec<String>) {
    let mut names: Vec<String> = Vec::new();
    let mut index: HashMap<&str, usize> = HashMap::new();
    let ids = labels
        .iter()
        .map(|&l| {
            *index.entry(l).or_insert_with(|| {
                names.push(l.to_string());
                names.len() - 1
            })
        })
        .collect();
    (ids, names)
}

fn runs(ids: &[usize]) -> Vec<Range<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=ids.len() {
        if i == ids.len() || ids[i] != ids[start] {
            out.push(start..i);
            start = i;
        }
    }
    out
}

/// Records a reordering: position `i` of the new order holds original asset
/// `order[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Permutation {
    order: Vec<usize>,
}

impl Permutation {
    pub fn identity(n: usize) -> Self {
        Permutation {
            order: (0..n).collect(),
        }
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn is_identity(&self) -> bool {
        self.order.iter().enumerate().all(|(i, &o)| i == o)
    }

    /// `inverse()[original] = new position`.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (new, &old) in self.order.iter().enumerate() {
            inv[old] = new;
        }
        inv
    }

    /// Maps a square matrix in canonical order back to input order.
    pub fn restore_matrix(&self, m: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
        let inv = self.inverse();
        nalgebra::DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(inv[i], inv[j])])
    }

    /// Maps a vector in canonical order back to input order.
    pub fn restore_vector<T: Clone>(&self, v: &[T]) -> Vec<T> {
        self.inverse().iter().map(|&i| v[i].clone()).collect()
    }
}

/// Sorts assets by (continent, country, original position).
pub fn reorder_by_hierarchy(
    panel: &ReturnPanel,
    groups: &GroupHierarchy,
) -> Result<(ReturnPanel, GroupHierarchy, Permutation)> {
    if groups.n_assets() != panel.n_assets() {
        return Err(Error::DimensionMismatch(format!(
            "hierarchy covers {} assets, panel has {}",
            groups.n_assets(),
            panel.n_assets()
        )));
    }
    let mut order: Vec<usize> = (0..panel.n_assets()).collect();
    order.sort_by_key(|&i| (groups.continent_of[i], groups.country_of[i], i));
    let panel = panel.select_assets(&order)?;
    let groups = groups.permuted(&order);
    Ok((panel, groups, Permutation { order }))
}
