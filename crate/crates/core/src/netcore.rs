//! Multiplex ego-networks and the overlap measure.
//!
//! An ego names alters across many elicited domains. Each `(alter, domain,
//! direction)` triple is one interaction; an interaction counts as
//! multidomain when its alter shows up under more than one distinct
//! `(domain, direction)` layer.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Give,
    Get,
    Joint,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Give => "give",
            Direction::Get => "get",
            Direction::Joint => "joint",
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Direction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "give" => Ok(Direction::Give),
            "get" => Ok(Direction::Get),
            "joint" => Ok(Direction::Joint),
            other => Err(Error::Validation(format!(
                "direction must be one of give/get/joint, got {other:?}"
            ))),
        }
    }
}

/// One named alter in one layer of an ego's network.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Tie {
    pub ego_id: String,
    pub alter_id: String,
    pub domain: String,
    pub direction: Direction,
}

impl Tie {
    pub fn new(
        ego_id: impl Into<String>,
        alter_id: impl Into<String>,
        domain: impl Into<String>,
        direction: Direction,
    ) -> Self {
        Tie {
            ego_id: ego_id.into(),
            alter_id: alter_id.into(),
            domain: domain.into(),
            direction,
        }
    }

    fn layer(&self) -> (&str, Direction) {
        (&self.domain, self.direction)
    }
}

impl fmt::Display for Tie {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({},{},{},{})",
            self.ego_id, self.alter_id, self.domain, self.direction
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MultiplexEgoNetwork {
    ego_id: String,
    ties: BTreeSet<Tie>,
    domains: BTreeSet<String>,
}

impl MultiplexEgoNetwork {
    pub fn ego_id(&self) -> &str {
        &self.ego_id
    }

    pub fn ties(&self) -> impl Iterator<Item = &Tie> {
        self.ties.iter()
    }

    pub fn n_ties(&self) -> usize {
        self.ties.len()
    }

    pub fn domains(&self) -> &BTreeSet<String> {
        &self.domains
    }

    /// Number of distinct `(domain, direction)` layers with at least one tie.
    pub fn n_layers(&self) -> usize {
        self.ties.iter().map(Tie::layer).collect::<BTreeSet<_>>().len()
    }
}

/// Builds a deduplicated network. Every tie must belong to `ego_id`.
pub fn build_network(
    ego_id: impl Into<String>,
    ties: impl IntoIterator<Item = Tie>,
) -> Result<MultiplexEgoNetwork> {
    let ego_id = ego_id.into();
    let mut set = BTreeSet::new();
    let mut domains = BTreeSet::new();
    for tie in ties {
        if tie.ego_id != ego_id {
            return Err(Error::InvalidTie {
                reason: format!("ego mismatch: network ego is {ego_id:?}"),
                tie: tie.to_string(),
            });
        }
        if tie.alter_id == tie.ego_id {
            return Err(Error::InvalidTie {
                reason: "self-tie".into(),
                tie: tie.to_string(),
            });
        }
        if tie.domain.is_empty() {
            return Err(Error::InvalidTie {
                reason: "empty domain label".into(),
                tie: tie.to_string(),
            });
        }
        domains.insert(tie.domain.clone());
        set.insert(tie);
    }
    Ok(MultiplexEgoNetwork {
        ego_id,
        ties: set,
        domains,
    })
}

/// Groups a flat tie list by ego. Egos come back in sorted order.
pub fn networks_from_ties(ties: Vec<Tie>) -> Result<BTreeMap<String, MultiplexEgoNetwork>> {
    let mut by_ego: BTreeMap<String, Vec<Tie>> = BTreeMap::new();
    for tie in ties {
        by_ego.entry(tie.ego_id.clone()).or_default().push(tie);
    }
    by_ego
        .into_iter()
        .map(|(ego, ties)| Ok((ego.clone(), build_network(ego, ties)?)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapScore {
    pub value: f64,
    pub n_interactions: usize,
    pub n_multidomain_interactions: usize,
    /// Set for isolates: the ratio is 0/0 and `value` is reported as 0.
    pub undefined: bool,
}

impl OverlapScore {
    /// The exact ratio as `(numerator, denominator)`.
    pub fn ratio(&self) -> (usize, usize) {
        (self.n_multidomain_interactions, self.n_interactions)
    }

    pub fn from_counts(n_multidomain: usize, n_interactions: usize) -> Self {
        let undefined = n_interactions == 0;
        OverlapScore {
            value: if undefined {
                0.0
            } else {
                n_multidomain as f64 / n_interactions as f64
            },
            n_interactions,
            n_multidomain_interactions: n_multidomain,
            undefined,
        }
    }
}

pub fn individual_overlap(net: &MultiplexEgoNetwork) -> OverlapScore {
    let mut layers_per_alter: BTreeMap<&str, BTreeSet<(&str, Direction)>> = BTreeMap::new();
    for tie in &net.ties {
        layers_per_alter
            .entry(&tie.alter_id)
            .or_default()
            .insert(tie.layer());
    }
    // Ties are unique per (alter, layer), so each alter contributes one
    // interaction per layer it appears in.
    let n_interactions = net.ties.len();
    let n_multi = layers_per_alter
        .values()
        .filter(|layers| layers.len() > 1)
        .map(BTreeSet::len)
        .sum();
    OverlapScore::from_counts(n_multi, n_interactions)
}

/// Unweighted mean of individual overlap per village. Villages without a
/// scored individual do not appear in the result.
pub fn village_overlap(
    scores: &[(String, OverlapScore)],
    village_assignment: &BTreeMap<String, String>,
) -> Result<BTreeMap<String, f64>> {
    let mut acc: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for (person, score) in scores {
        let village = village_assignment.get(person).ok_or_else(|| {
            Error::Validation(format!("person {person:?} has no village assignment"))
        })?;
        let slot = acc.entry(village).or_insert((0.0, 0));
        slot.0 += score.value;
        slot.1 += 1;
    }
    Ok(acc
        .into_iter()
        .map(|(v, (sum, n))| (v.to_string(), sum / n as f64))
        .collect())
}

pub const EDGES_HEADER: [&str; 4] = ["ego_id", "alter_id", "domain", "direction"];

/// Reads an `edges.csv` file.
pub fn read_edges(path: impl AsRef<Path>) -> Result<Vec<Tie>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_edges(file, &path.display().to_string())
}

pub fn parse_edges<R: std::io::Read>(reader: R, source: &str) -> Result<Vec<Tie>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let parse_err = |line: usize, reason: String| Error::Parse {
        path: source.to_string(),
        line,
        reason,
    };
    match records.next() {
        Some(header) => {
            let header = header?;
            if header.iter().ne(EDGES_HEADER.iter().copied()) {
                return Err(parse_err(
                    1,
                    format!("header must be exactly {}", EDGES_HEADER.join(",")),
                ));
            }
        }
        None => return Err(parse_err(1, "missing header".into())),
    }
    let mut ties = Vec::new();
    for record in records {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        if record.len() != 4 {
            return Err(parse_err(
                line,
                format!("expected 4 fields, found {}", record.len()),
            ));
        }
        if record.iter().any(|f| f.contains(',')) {
            return Err(parse_err(line, "identifiers may not contain commas".into()));
        }
        let direction = record[3]
            .parse::<Direction>()
            .map_err(|e| parse_err(line, e.to_string()))?;
        let tie = Tie::new(&record[0], &record[1], &record[2], direction);
        if tie.ego_id.is_empty() || tie.alter_id.is_empty() || tie.domain.is_empty() {
            return Err(parse_err(line, "empty identifier or domain".into()));
        }
        ties.push(tie);
    }
    Ok(ties)
}
