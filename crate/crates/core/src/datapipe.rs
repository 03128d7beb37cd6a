//! Survey ingestion and analysis-dataset assembly.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{self, MultiplexEgoNetwork, OverlapScore};

pub const INDIVIDUALS_HEADER: [&str; 6] = [
    "person_id",
    "village_id",
    "dg_offer_gyd",
    "ug_offer_gyd",
    "mayu_per_month",
    "mayu_per_year",
];

pub const DEFAULT_ANNUALIZATION_FACTOR: u64 = 12;
/// Village sizes enter models as hundreds of residents.
pub const VILLAGE_SIZE_SCALE: f64 = 100.0;
/// Offers above this many GYD share the top category.
pub const OFFER_CAP_GYD: u32 = 500;
pub const N_OFFER_CATEGORIES: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndividualRecord {
    pub person_id: String,
    pub village_id: String,
    pub dg_offer_gyd: Option<u32>,
    pub ug_offer_gyd: Option<u32>,
    pub mayu_per_month: Option<u64>,
    pub mayu_per_year: Option<u64>,
}

fn check_offer(offer: u32) -> Result<()> {
    if !offer.is_multiple_of(100) {
        return Err(Error::Validation(format!(
            "offer not multiple of 100: {offer}"
        )));
    }
    if offer > 1000 {
        return Err(Error::Validation(format!(
            "offer outside 0..=1000 GYD: {offer}"
        )));
    }
    Ok(())
}

/// Maps a GYD offer onto the six-category ordinal scale (0, 100, ..., 500+).
pub fn recode_offer(offer_gyd: u32) -> Result<u8> {
    check_offer(offer_gyd)?;
    Ok((offer_gyd.min(OFFER_CAP_GYD) / 100) as u8)
}

/// Yearly mayu count: `monthly * factor` when a positive monthly rate was
/// reported, otherwise the yearly recall.
pub fn annualize_mayu(monthly: Option<u64>, yearly: Option<u64>, factor: u64) -> Result<u64> {
    match (monthly, yearly) {
        (Some(m), _) if m > 0 => Ok(m * factor),
        (_, Some(y)) => Ok(y),
        (Some(0), None) => Ok(0),
        _ => Err(Error::Validation("no mayu report".into())),
    }
}

pub fn read_individuals(path: impl AsRef<Path>) -> Result<Vec<IndividualRecord>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_individuals(file, &path.display().to_string())
}

pub fn parse_individuals<R: std::io::Read>(
    reader: R,
    source: &str,
) -> Result<Vec<IndividualRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let err = |line: usize, reason: String| Error::Parse {
        path: source.to_string(),
        line,
        reason,
    };
    let mut records = rdr.records();
    match records.next() {
        Some(h) => {
            if h?.iter().ne(INDIVIDUALS_HEADER.iter().copied()) {
                return Err(err(
                    1,
                    format!("header must be exactly {}", INDIVIDUALS_HEADER.join(",")),
                ));
            }
        }
        None => return Err(err(1, "missing header".into())),
    }

    fn cell<T: FromStr>(raw: &str, col: &str) -> std::result::Result<Option<T>, String> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Ok(None);
        }
        raw.parse::<T>()
            .map(Some)
            .map_err(|_| format!("{col}: expected a nonnegative integer, got {raw:?}"))
    }

    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != INDIVIDUALS_HEADER.len() {
            return Err(err(
                line,
                format!("expected 6 fields, found {}", record.len()),
            ));
        }
        let person_id = record[0].trim().to_string();
        let village_id = record[1].trim().to_string();
        if person_id.is_empty() || village_id.is_empty() {
            return Err(err(line, "person_id and village_id are required".into()));
        }
        if !seen.insert(person_id.clone()) {
            return Err(err(line, format!("duplicate person_id {person_id:?}")));
        }
        let parsed = (|| -> std::result::Result<IndividualRecord, String> {
            let dg = cell::<u32>(&record[2], "dg_offer_gyd")?;
            let ug = cell::<u32>(&record[3], "ug_offer_gyd")?;
            for offer in dg.iter().chain(ug.iter()) {
                check_offer(*offer).map_err(|e| e.to_string())?;
            }
            Ok(IndividualRecord {
                person_id,
                village_id,
                dg_offer_gyd: dg,
                ug_offer_gyd: ug,
                mayu_per_month: cell(&record[4], "mayu_per_month")?,
                mayu_per_year: cell(&record[5], "mayu_per_year")?,
            })
        })();
        out.push(parsed.map_err(|reason| err(line, reason))?);
    }
    Ok(out)
}

/// `village_id,size` file of census sizes.
pub fn read_village_sizes(path: impl AsRef<Path>) -> Result<BTreeMap<String, f64>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    let headers = rdr.headers()?.clone();
    if headers.iter().ne(["village_id", "size"]) {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            reason: "header must be exactly village_id,size".into(),
        });
    }
    let mut sizes = BTreeMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let size: f64 = record[1].trim().parse().map_err(|_| Error::Parse {
            path: path.display().to_string(),
            line,
            reason: format!("bad size {:?}", &record[1]),
        })?;
        if !(size.is_finite() && size > 0.0) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line,
                reason: "size must be positive".into(),
            });
        }
        sizes.insert(record[0].trim().to_string(), size);
    }
    Ok(sizes)
}

/// Outcome columns of the analysis dataset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Dg,
    Ug,
    Mayu,
}

impl Outcome {
    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Dg => "dg",
            Outcome::Ug => "ug",
            Outcome::Mayu => "mayu",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Outcome {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dg" => Ok(Outcome::Dg),
            "ug" => Ok(Outcome::Ug),
            "mayu" => Ok(Outcome::Mayu),
            _ => Err(Error::Validation(format!(
                "unknown outcome {s:?} (expected dg, ug or mayu)"
            ))),
        }
    }
}

/// Predictors available to the models.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Covariate {
    #[serde(rename = "overlap_i")]
    OverlapIndividual,
    #[serde(rename = "overlap_V")]
    OverlapVillage,
    #[serde(rename = "size_V")]
    VillageSize,
}

impl Covariate {
    pub fn name(self) -> &'static str {
        match self {
            Covariate::OverlapIndividual => "overlap_i",
            Covariate::OverlapVillage => "overlap_V",
            Covariate::VillageSize => "size_V",
        }
    }
}

impl fmt::Display for Covariate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Covariate {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "overlap_i" => Ok(Covariate::OverlapIndividual),
            "overlap_V" => Ok(Covariate::OverlapVillage),
            "size_V" => Ok(Covariate::VillageSize),
            _ => Err(Error::Validation(format!(
                "unknown covariate {s:?} (expected overlap_i, overlap_V or size_V)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoopRow {
    pub person_id: String,
    pub village_id: String,
    pub overlap_i: f64,
    pub overlap_undefined: bool,
    #[serde(rename = "overlap_V")]
    pub overlap_v: f64,
    /// Raw census size (residents).
    pub village_size: Option<f64>,
    pub dg_category: Option<u8>,
    pub ug_category: Option<u8>,
    pub mayu_yearly: Option<u64>,
    pub dg_offer_gyd: Option<u32>,
    pub ug_offer_gyd: Option<u32>,
    pub mayu_per_month: Option<u64>,
    pub mayu_per_year: Option<u64>,
}

impl CoopRow {
    pub fn covariate(&self, cov: Covariate) -> Option<f64> {
        match cov {
            Covariate::OverlapIndividual => Some(self.overlap_i),
            Covariate::OverlapVillage => Some(self.overlap_v),
            Covariate::VillageSize => self.village_size.map(|s| s / VILLAGE_SIZE_SCALE),
        }
    }

    /// Outcome value as a count or category index.
    pub fn outcome(&self, outcome: Outcome) -> Option<u64> {
        match outcome {
            Outcome::Dg => self.dg_category.map(u64::from),
            Outcome::Ug => self.ug_category.map(u64::from),
            Outcome::Mayu => self.mayu_yearly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMetadata {
    /// Distinct `(domain, direction)` layers observed across all networks.
    pub layer_count: usize,
    pub domain_count: usize,
    pub annualization_factor: u64,
    pub village_size_scale: f64,
    pub village_overlap_basis: String,
    pub n_rows: usize,
    pub n_villages: usize,
    pub n_overlap_undefined: usize,
    pub overlap_undefined_persons: Vec<String>,
    pub n_missing_mayu: usize,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoopDataset {
    pub metadata: DatasetMetadata,
    pub rows: Vec<CoopRow>,
}

impl CoopDataset {
    /// Builds a dataset straight from rows, deriving the metadata.
    pub fn from_rows(rows: Vec<CoopRow>, annualization_factor: u64, notes: Vec<String>) -> Self {
        let undefined: Vec<String> = rows
            .iter()
            .filter(|r| r.overlap_undefined)
            .map(|r| r.person_id.clone())
            .collect();
        let villages: BTreeSet<&str> = rows.iter().map(|r| r.village_id.as_str()).collect();
        CoopDataset {
            metadata: DatasetMetadata {
                layer_count: 0,
                domain_count: 0,
                annualization_factor,
                village_size_scale: VILLAGE_SIZE_SCALE,
                village_overlap_basis: "mean over sampled individuals".into(),
                n_rows: rows.len(),
                n_villages: villages.len(),
                n_overlap_undefined: undefined.len(),
                overlap_undefined_persons: undefined,
                n_missing_mayu: rows.iter().filter(|r| r.mayu_yearly.is_none()).count(),
                notes,
            },
            rows,
        }
    }

    pub fn villages(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.village_id.as_str()).collect()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Recovers the survey records the dataset was assembled from.
    pub fn disassemble(&self) -> Vec<IndividualRecord> {
        self.rows
            .iter()
            .map(|r| IndividualRecord {
                person_id: r.person_id.clone(),
                village_id: r.village_id.clone(),
                dg_offer_gyd: r.dg_offer_gyd,
                ug_offer_gyd: r.ug_offer_gyd,
                mayu_per_month: r.mayu_per_month,
                mayu_per_year: r.mayu_per_year,
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AssemblyOptions {
    pub annualization_factor: u64,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        AssemblyOptions {
            annualization_factor: DEFAULT_ANNUALIZATION_FACTOR,
        }
    }
}

/// Joins survey records with their ego-networks. Individuals without a
/// network entry are treated as isolates.
pub fn assemble_dataset(
    individuals: &[IndividualRecord],
    networks: &BTreeMap<String, MultiplexEgoNetwork>,
    village_sizes: Option<&BTreeMap<String, f64>>,
    options: AssemblyOptions,
) -> Result<CoopDataset> {
    let mut scores = Vec::with_capacity(individuals.len());
    let mut assignment = BTreeMap::new();
    for rec in individuals {
        let score = networks
            .get(&rec.person_id)
            .map_or(OverlapScore::from_counts(0, 0), netcore::individual_overlap);
        if assignment
            .insert(rec.person_id.clone(), rec.village_id.clone())
            .is_some()
        {
            return Err(Error::Validation(format!(
                "duplicate person_id {:?}",
                rec.person_id
            )));
        }
        scores.push((rec.person_id.clone(), score));
    }
    let village_means = netcore::village_overlap(&scores, &assignment)?;

    let mut rows = Vec::with_capacity(individuals.len());
    for (rec, (_, score)) in individuals.iter().zip(&scores) {
        let village_size = match village_sizes {
            Some(sizes) => Some(*sizes.get(&rec.village_id).ok_or_else(|| {
                Error::Validation(format!(
                    "village {:?} of person {:?} missing from village size map",
                    rec.village_id, rec.person_id
                ))
            })?),
            None => None,
        };
        rows.push(CoopRow {
            person_id: rec.person_id.clone(),
            village_id: rec.village_id.clone(),
            overlap_i: score.value,
            overlap_undefined: score.undefined,
            overlap_v: village_means[&rec.village_id],
            village_size,
            dg_category: rec.dg_offer_gyd.map(recode_offer).transpose()?,
            ug_category: rec.ug_offer_gyd.map(recode_offer).transpose()?,
            mayu_yearly: annualize_mayu(
                rec.mayu_per_month,
                rec.mayu_per_year,
                options.annualization_factor,
            )
            .ok(),
            dg_offer_gyd: rec.dg_offer_gyd,
            ug_offer_gyd: rec.ug_offer_gyd,
            mayu_per_month: rec.mayu_per_month,
            mayu_per_year: rec.mayu_per_year,
        });
    }

    let sampled: BTreeSet<&str> = individuals.iter().map(|r| r.person_id.as_str()).collect();
    let mut layers = BTreeSet::new();
    let mut domains = BTreeSet::new();
    for net in networks
        .values()
        .filter(|n| sampled.contains(n.ego_id()))
    {
        for tie in net.ties() {
            layers.insert((tie.domain.clone(), tie.direction));
            domains.insert(tie.domain.clone());
        }
    }
    let mut dataset = CoopDataset::from_rows(
        rows,
        options.annualization_factor,
        vec![
            "village overlap averages sampled individuals only".into(),
            "individuals with no ties have overlap 0 and overlap_undefined = true".into(),
        ],
    );
    dataset.metadata.layer_count = layers.len();
    dataset.metadata.domain_count = domains.len();
    Ok(dataset)
}
